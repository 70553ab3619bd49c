//! One function per subcommand. Every artifact lives in the output directory
//! and is written atomically.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::info;
use storecast::autodiff::Checkpoint;
use storecast::baselines::{fit_arimax_panel, params_to_csv_string};
use storecast::dataset::{load_panel, StorePanel};
use storecast::features::{build_features, FeatureMatrix};
use storecast::fsutil::write_atomic;
use storecast::graph_analysis::{export_heatmap_data, AdjacencyAnalysis};
use storecast::metrics::{build_report, report_json, report_text, store_metrics_csv, EvalPanel};
use storecast::stgnn::{build_panel_tensors, make_windows, split_windows, ModelParams};
use storecast::trainer::{predict, train};

use crate::config::RunConfig;
use crate::error::CliError;

pub const PANEL: &str = "panel.csv";
pub const FEATURES: &str = "features.csv";
pub const CHECKPOINT: &str = "stgnn.ckpt";
pub const HISTORY: &str = "stgnn_history.csv";
pub const ARIMAX_PARAMS: &str = "arimax_params.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const HEATMAP: &str = "adjacency_heatmap.csv";
pub const CENTRALITY: &str = "centrality.json";

fn forecast_file(model: &str) -> String {
    format!("forecasts_{model}.csv")
}

fn require(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingPrerequisite(path))
    }
}

fn write(cfg: &RunConfig, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out_path(name);
    write_atomic(&path, contents.as_bytes())?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_features(cfg: &RunConfig) -> Result<FeatureMatrix, CliError> {
    let path = require(cfg.out_path(FEATURES))?;
    Ok(FeatureMatrix::from_csv_str(&std::fs::read_to_string(path)?)?)
}

fn load_stored_panel(cfg: &RunConfig) -> Result<StorePanel, CliError> {
    Ok(load_panel(&require(cfg.out_path(PANEL))?)?)
}

/// One forecast row in long format.
struct ForecastRow {
    store: u32,
    date: NaiveDate,
    forecast: f64,
    actual: f64,
}

fn forecasts_csv(rows: &[ForecastRow]) -> String {
    let mut out = String::from("store,date,forecast,actual\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.store, r.date.format("%Y-%m-%d"), r.forecast, r.actual);
    }
    out
}

fn parse_forecasts(path: &Path) -> Result<Vec<ForecastRow>, CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["store", "date", "forecast", "actual"] {
        return Err(bad("expected header store,date,forecast,actual".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ForecastRow {
            store: field(0).parse().map_err(|_| bad(format!("bad store {}", field(0))))?,
            date: NaiveDate::parse_from_str(field(1), "%Y-%m-%d").map_err(|_| bad(format!("bad date {}", field(1))))?,
            forecast: field(2).parse().map_err(|_| bad(format!("bad forecast {}", field(2))))?,
            actual: field(3).parse().map_err(|_| bad(format!("bad actual {}", field(3))))?,
        });
    }
    Ok(rows)
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::Config("ingest needs --data or a `data` config key".into()))?;
    let panel = load_panel(&data)?;
    info!("{} stores x {} weeks", panel.num_stores(), panel.num_weeks());
    write(cfg, PANEL, &panel.to_csv_string())
}

pub fn features(cfg: &RunConfig) -> Result<(), CliError> {
    let panel = load_stored_panel(cfg)?;
    let fm = build_features(&panel)?;
    write(cfg, FEATURES, &fm.to_csv_string())
}

pub fn train_stgnn(cfg: &RunConfig) -> Result<(), CliError> {
    let fm = load_features(cfg)?;
    let pt = build_panel_tensors(&fm, cfg.train_frac, cfg.window)?;
    let windows = make_windows(&pt, cfg.window)?;
    let (train_ws, test_ws) = split_windows(&windows, cfg.train_frac)?;
    let params = ModelParams::init(cfg.model_config(), pt.num_stores(), pt.num_features());
    info!(
        "training on {} windows ({} parameters), testing on {}",
        train_ws.len(),
        params.num_parameters(),
        test_ws.len()
    );
    let (params, history, optimizer) = train(&train_ws, params, &cfg.train_config())?;

    let forecast = predict(&test_ws, &params)?;
    let s_len = pt.num_stores();
    let mut rows = Vec::with_capacity(forecast.len());
    for (s, &store) in pt.stores.iter().enumerate() {
        for (i, &tt) in test_ws.target_steps.iter().enumerate() {
            rows.push(ForecastRow {
                store,
                date: pt.dates[tt],
                forecast: forecast[i * s_len + s],
                actual: pt.y_raw[tt * s_len + s],
            });
        }
    }

    let stores: Vec<String> = pt.stores.iter().map(u32::to_string).collect();
    let meta = BTreeMap::from([
        ("stores".to_string(), stores.join(",")),
        ("train_frac".to_string(), cfg.train_frac.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("features".to_string(), pt.feature_names.join(",")),
    ]);
    std::fs::create_dir_all(&cfg.out)?;
    params.to_checkpoint(Some(&optimizer), &meta).save(&cfg.out_path(CHECKPOINT))?;
    write(cfg, HISTORY, &history.to_csv_string())?;
    write(cfg, &forecast_file("stgnn"), &forecasts_csv(&rows))
}

pub fn fit_arimax(cfg: &RunConfig) -> Result<(), CliError> {
    let fm = load_features(cfg)?;
    let exog: Vec<&str> = cfg.arimax_exog.iter().map(String::as_str).collect();
    let fits = fit_arimax_panel(&fm, &exog, cfg.train_frac)?;
    let mut rows = Vec::new();
    for f in &fits {
        if f.forecasts.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!("store {}: non-finite ARIMAX forecast", f.store)));
        }
        for ((date, forecast), actual) in f.dates.iter().zip(&f.forecasts).zip(&f.actuals) {
            rows.push(ForecastRow {
                store: f.store,
                date: *date,
                forecast: *forecast,
                actual: *actual,
            });
        }
    }
    write(cfg, ARIMAX_PARAMS, &params_to_csv_string(&fits, &exog))?;
    write(cfg, &forecast_file("arimax"), &forecasts_csv(&rows))
}

/// Model names with a forecast file in the output directory, sorted.
fn forecast_models(out: &Path) -> Result<Vec<String>, CliError> {
    let mut models = Vec::new();
    if out.is_dir() {
        for entry in std::fs::read_dir(out)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(model) = name.strip_prefix("forecasts_").and_then(|n| n.strip_suffix(".csv")) {
                if !model.is_empty() && model != "persistence" {
                    models.push(model.to_string());
                }
            }
        }
    }
    models.sort();
    Ok(models)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let models = forecast_models(&cfg.out)?;
    if models.is_empty() {
        return Err(CliError::MissingPrerequisite(cfg.out_path("forecasts_<model>.csv")));
    }
    let panel = load_stored_panel(cfg)?;
    let stores = panel.store_ids();
    let dates = panel.dates().to_vec();
    let date_index: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let sales: Vec<&[f64]> = stores
        .iter()
        .map(|s| panel.store(*s).expect("listed store").weekly_sales.as_slice())
        .collect();

    // Evaluate on the weeks every model forecasts for every store.
    let mut per_model = Vec::new();
    let mut common: Option<BTreeSet<usize>> = None;
    for model in &models {
        let rows = parse_forecasts(&cfg.out_path(&forecast_file(model)))?;
        let mut map: HashMap<(u32, usize), f64> = HashMap::new();
        for r in rows {
            let t = *date_index
                .get(&r.date)
                .ok_or_else(|| CliError::Data(format!("{model}: date {} is not in the panel", r.date)))?;
            map.insert((r.store, t), r.forecast);
        }
        let covered: BTreeSet<usize> = (1..dates.len())
            .filter(|t| stores.iter().all(|s| map.contains_key(&(*s, *t))))
            .collect();
        common = Some(match common {
            None => covered,
            Some(c) => c.intersection(&covered).copied().collect(),
        });
        per_model.push((model.clone(), map));
    }
    let steps: Vec<usize> = common.unwrap_or_default().into_iter().collect();
    if steps.is_empty() {
        return Err(CliError::Data("forecast files share no complete evaluation week".into()));
    }

    let gather = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        steps
            .iter()
            .flat_map(|&t| (0..stores.len()).map(move |s| (t, s)))
            .map(|(t, s)| f(t, s))
            .collect()
    };
    let actual = gather(&|t, s| sales[s][t]);
    let baseline = gather(&|t, s| sales[s][t - 1]);
    let eval_dates: Vec<NaiveDate> = steps.iter().map(|&t| dates[t]).collect();
    let mut panels = Vec::new();
    for (model, map) in &per_model {
        let forecast = gather(&|t, s| map[&(stores[s], t)]);
        panels.push((
            model.clone(),
            EvalPanel::new(stores.clone(), eval_dates.clone(), actual.clone(), forecast, baseline.clone())?,
        ));
    }
    panels.push((
        "persistence".to_string(),
        EvalPanel::new(stores.clone(), eval_dates.clone(), actual.clone(), baseline.clone(), baseline.clone())?,
    ));
    let reports = build_report(&panels)?;

    let fmt = |d: &NaiveDate| d.format("%Y-%m-%d").to_string();
    let metadata = BTreeMap::from([
        ("evaluation_start".to_string(), serde_json::json!(fmt(&eval_dates[0]))),
        ("evaluation_end".to_string(), serde_json::json!(fmt(eval_dates.last().unwrap()))),
        ("evaluation_weeks".to_string(), serde_json::json!(eval_dates.len())),
        ("stores".to_string(), serde_json::json!(stores.len())),
        ("arimax_exog".to_string(), serde_json::json!(cfg.arimax_exog)),
        ("persistence".to_string(), serde_json::json!("previous week's actual sales")),
    ]);
    write(cfg, REPORT_JSON, &report_json(&reports, &metadata))?;
    write(cfg, REPORT_TEXT, &report_text(&reports))?;
    for r in &reports {
        write(cfg, &format!("metrics_{}.csv", r.model), &store_metrics_csv(r))?;
    }
    Ok(())
}

pub fn graph_report(cfg: &RunConfig) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&require(cfg.out_path(CHECKPOINT))?)?;
    let params = ModelParams::from_checkpoint(&ckpt)?;
    let stores: Vec<u32> = match ckpt.metadata.get("stores") {
        Some(list) => list
            .split(',')
            .map(|s| s.parse().map_err(|_| CliError::Data(format!("bad store id {s} in checkpoint"))))
            .collect::<Result<_, _>>()?,
        None => (1..=params.num_stores as u32).collect(),
    };
    if stores.len() != params.num_stores {
        return Err(CliError::Data("checkpoint store list does not match the embeddings".into()));
    }
    let analysis = AdjacencyAnalysis::new(stores, params.adjacency())?;
    std::fs::create_dir_all(&cfg.out)?;
    export_heatmap_data(&analysis, &cfg.out_path(HEATMAP), &cfg.out_path(CENTRALITY))?;
    info!("top stores by centrality: {:?}", &analysis.ranking[..analysis.ranking.len().min(5)]);
    Ok(())
}
