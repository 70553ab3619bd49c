//! End-to-end library pipeline on the bundled synthetic fixture.

use std::path::PathBuf;

use storecast::baselines::{fit_arimax_panel, persistence_forecast, DEFAULT_EXOG};
use storecast::dataset::load_panel;
use storecast::features::build_features;
use storecast::graph_analysis::AdjacencyAnalysis;
use storecast::metrics::{compute_report, EvalPanel};
use storecast::stgnn::{build_panel_tensors, make_windows, split_windows, ModelConfig, ModelParams};
use storecast::trainer::{predict, train, TrainConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/walmart_synthetic.csv")
}

#[test]
fn fixture_loads_as_balanced_panel() {
    let panel = load_panel(&fixture()).unwrap();
    assert_eq!(panel.num_stores(), 5);
    assert_eq!(panel.num_weeks(), 143);
    for id in panel.store_ids() {
        let s = panel.store(id).unwrap();
        assert!(s.weekly_sales.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}

#[test]
fn arimax_fits_every_store_with_finite_forecasts() {
    let panel = load_panel(&fixture()).unwrap();
    let fm = build_features(&panel).unwrap();
    let fits = fit_arimax_panel(&fm, &DEFAULT_EXOG, 0.8).unwrap();
    assert_eq!(fits.len(), 5);
    for fit in &fits {
        assert_eq!(fit.forecasts.len(), 143 - 114);
        assert!(fit.forecasts.iter().all(|v| v.is_finite()));
        assert!(fit.params.phi.abs() < 1.0 && fit.params.theta.abs() < 1.0);
        assert!(fit.params.sigma2 > 0.0);
    }
}

#[test]
fn short_training_run_produces_scorable_forecasts() {
    let panel = load_panel(&fixture()).unwrap();
    let fm = build_features(&panel).unwrap();
    let cfg = ModelConfig::default();
    let pt = build_panel_tensors(&fm, 0.8, cfg.window).unwrap();
    let ws = make_windows(&pt, cfg.window).unwrap();
    let (train_ws, test_ws) = split_windows(&ws, 0.8).unwrap();
    assert_eq!((train_ws.len(), test_ws.len()), (104, 26));

    let params = ModelParams::init(cfg, pt.num_stores(), pt.num_features());
    let tcfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let (params, history, _) = train(&train_ws, params, &tcfg).unwrap();
    assert_eq!(history.epochs.len(), 5);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite()));

    let forecast = predict(&test_ws, &params).unwrap();
    let s_len = pt.num_stores();
    assert_eq!(forecast.len(), test_ws.len() * s_len);
    assert!(forecast.iter().all(|v| v.is_finite() && *v > 0.0));

    // Time-major actuals and persistence on the test weeks.
    let mut actual = Vec::with_capacity(forecast.len());
    let mut baseline = Vec::with_capacity(forecast.len());
    for &tt in &test_ws.target_steps {
        for s in 0..s_len {
            actual.push(pt.y_raw[tt * s_len + s]);
        }
    }
    let per_store: Vec<Vec<f64>> = (0..s_len)
        .map(|s| {
            let y: Vec<f64> = (0..pt.num_weeks()).map(|t| pt.y_raw[t * s_len + s]).collect();
            let first = test_ws.target_steps[0];
            persistence_forecast(&y, first..first + test_ws.len()).unwrap()
        })
        .collect();
    for i in 0..test_ws.len() {
        for store in &per_store {
            baseline.push(store[i]);
        }
    }

    let eval = EvalPanel::new(pt.stores.clone(), test_ws.target_dates.clone(), actual, forecast, baseline).unwrap();
    let report = compute_report("stgnn", &eval).unwrap();
    assert!(report.ntae.is_finite() && report.ntae > 0.0);
    assert!((0.0..=100.0).contains(&report.win_rate));
    assert_eq!(report.per_store.len(), 5);

    let analysis = AdjacencyAnalysis::new(pt.stores.clone(), params.adjacency()).unwrap();
    let mut order = analysis.leaf_order.clone();
    order.sort_unstable();
    assert_eq!(order, vec![0, 1, 2, 3, 4]);
}
