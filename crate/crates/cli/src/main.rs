//! `storecast`: ingest -> features -> train-stgnn / fit-arimax -> evaluate ->
//! graph-report.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "storecast", version, about = "Multi-store weekly sales forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate a raw Walmart-schema CSV to a store x week panel (panel.csv)
    Ingest(CommonArgs),
    /// Build the engineered feature table (features.csv)
    Features(CommonArgs),
    /// Train the graph model and forecast the test weeks
    TrainStgnn(CommonArgs),
    /// Fit per-store ARIMAX(1,0,1) baselines and forecast the test weeks
    FitArimax(CommonArgs),
    /// Score every forecasts_<model>.csv against persistence
    Evaluate(CommonArgs),
    /// Export the clustered learned adjacency and store centrality
    GraphReport(CommonArgs),
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults shown here.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Config file of `key = value` lines
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Raw sales CSV (used by ingest) [default: none]
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output directory for all artifacts [default: out]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed for model initialization [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Input window length in weeks [default: 12]
    #[arg(long)]
    window: Option<usize>,
    /// Chronological train fraction [default: 0.8]
    #[arg(long, value_name = "FRACTION")]
    train_frac: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.train_frac {
            cfg.train_frac = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a.resolve()?),
        Command::Features(a) => commands::features(&a.resolve()?),
        Command::TrainStgnn(a) => commands::train_stgnn(&a.resolve()?),
        Command::FitArimax(a) => commands::fit_arimax(&a.resolve()?),
        Command::Evaluate(a) => commands::evaluate(&a.resolve()?),
        Command::GraphReport(a) => commands::graph_report(&a.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
