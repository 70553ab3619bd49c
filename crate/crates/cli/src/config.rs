//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use storecast::baselines::DEFAULT_EXOG;
use storecast::stgnn::ModelConfig;
use storecast::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub window: usize,
    pub train_frac: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub val_fraction: f64,
    pub smooth_l1_beta: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub arimax_exog: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            data: None,
            out: PathBuf::from("out"),
            seed: 42,
            window: m.window,
            train_frac: 0.8,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            min_lr: t.min_lr,
            val_fraction: t.val_fraction_of_train,
            smooth_l1_beta: t.smooth_l1_beta,
            hidden: m.hidden,
            embed_dim: m.embed_dim,
            arimax_exog: DEFAULT_EXOG.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "plateau_factor" => self.plateau_factor = parse(key, value)?,
            "plateau_patience" => self.plateau_patience = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "smooth_l1_beta" => self.smooth_l1_beta = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "arimax_exog" => {
                self.arimax_exog = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(CliError::Config(format!("train_frac must lie in (0, 1), got {}", self.train_frac)));
        }
        if self.window == 0 {
            return Err(CliError::Config("window must be positive".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(CliError::Config("hidden and embed_dim must be positive".into()));
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            min_lr: self.min_lr,
            val_fraction_of_train: self.val_fraction,
            seed: self.seed,
            smooth_l1_beta: self.smooth_l1_beta,
            ..TrainConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            window: self.window,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}
