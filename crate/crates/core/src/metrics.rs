//! Forecast evaluation: per-store MAE/RMSE/MAPE, NTAE, win rate against
//! persistence, tail and dispersion of the per-store MAPE distribution, and
//! report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("total actual volume is not positive")]
    ZeroVolume,
    #[error("store index {0} has no evaluable rows")]
    EmptyStore(usize),
    #[error("panels are not aligned: {0}")]
    AlignmentMismatch(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Aligned actuals, model forecasts and persistence forecasts. All arrays are
/// `T' x S`, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPanel {
    pub stores: Vec<u32>,
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
    pub baseline: Vec<f64>,
}

impl EvalPanel {
    pub fn new(
        stores: Vec<u32>,
        dates: Vec<NaiveDate>,
        actual: Vec<f64>,
        forecast: Vec<f64>,
        baseline: Vec<f64>,
    ) -> Result<Self> {
        let n = stores.len() * dates.len();
        for (name, arr) in [("actual", &actual), ("forecast", &forecast), ("baseline", &baseline)] {
            if arr.len() != n {
                return Err(MetricsError::AlignmentMismatch(format!(
                    "{name} has {} values, expected {} weeks x {} stores",
                    arr.len(),
                    dates.len(),
                    stores.len()
                )));
            }
        }
        Ok(Self {
            stores,
            dates,
            actual,
            forecast,
            baseline,
        })
    }

    pub fn num_stores(&self) -> usize {
        self.stores.len()
    }

    pub fn num_steps(&self) -> usize {
        self.dates.len()
    }

    /// `(actual, forecast)` pairs of one store, in time order.
    fn store_pairs(&self, s: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.num_stores();
        (0..self.num_steps()).map(move |t| (self.actual[t * n + s], self.forecast[t * n + s]))
    }

    /// Rows whose actual is not positive and therefore excluded from the
    /// relative metrics.
    pub fn excluded_rows(&self) -> usize {
        self.actual.iter().filter(|y| !(**y > 0.0)).count()
    }
}

/// `100 * sum|y - yhat| / sum y` over rows with positive actuals.
pub fn ntae(p: &EvalPanel) -> Result<f64> {
    let (mut err, mut vol) = (0.0, 0.0);
    for (y, f) in p.actual.iter().zip(&p.forecast) {
        if *y > 0.0 {
            err += (y - f).abs();
            vol += y;
        }
    }
    if !(vol > 0.0) {
        return Err(MetricsError::ZeroVolume);
    }
    Ok(100.0 * err / vol)
}

pub fn store_mae(p: &EvalPanel, s: usize) -> Result<f64> {
    if p.num_steps() == 0 || s >= p.num_stores() {
        return Err(MetricsError::EmptyStore(s));
    }
    Ok(p.store_pairs(s).map(|(y, f)| (y - f).abs()).sum::<f64>() / p.num_steps() as f64)
}

pub fn store_rmse(p: &EvalPanel, s: usize) -> Result<f64> {
    if p.num_steps() == 0 || s >= p.num_stores() {
        return Err(MetricsError::EmptyStore(s));
    }
    let mse = p.store_pairs(s).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / p.num_steps() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute percentage error over the store's rows with positive actuals.
pub fn store_mape(p: &EvalPanel, s: usize) -> Result<f64> {
    if s >= p.num_stores() {
        return Err(MetricsError::EmptyStore(s));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (y, f) in p.store_pairs(s) {
        if y > 0.0 {
            sum += (y - f).abs() / y;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyStore(s));
    }
    Ok(100.0 * sum / n as f64)
}

/// 90th percentile by linear interpolation at zero-indexed rank `0.9 (S - 1)`.
pub fn p90_mape(mapes: &[f64]) -> f64 {
    percentile(mapes, 0.9)
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Population variance `(1/S) sum (m - mean)^2`.
pub fn var_mape(mapes: &[f64]) -> f64 {
    let n = mapes.len() as f64;
    let mean = mapes.iter().sum::<f64>() / n;
    mapes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n
}

/// Percentage of points where the model's absolute error is strictly below
/// the persistence error. Ties count as losses.
pub fn win_rate(p: &EvalPanel) -> f64 {
    if p.actual.is_empty() {
        return 0.0;
    }
    let wins = p
        .actual
        .iter()
        .zip(&p.forecast)
        .zip(&p.baseline)
        .filter(|((y, f), b)| (*y - *f).abs() < (*y - *b).abs())
        .count();
    100.0 * wins as f64 / p.actual.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreMetrics {
    pub store: u32,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model: String,
    pub ntae: f64,
    pub win_rate: f64,
    pub p90_mape: f64,
    pub var_mape: f64,
    pub excluded_rows: usize,
    pub num_points: usize,
    pub per_store: Vec<StoreMetrics>,
}

impl MetricsReport {
    pub fn mapes(&self) -> Vec<f64> {
        self.per_store.iter().map(|s| s.mape).collect()
    }
}

pub fn compute_report(model: &str, p: &EvalPanel) -> Result<MetricsReport> {
    let per_store = (0..p.num_stores())
        .map(|s| {
            Ok(StoreMetrics {
                store: p.stores[s],
                mae: store_mae(p, s)?,
                rmse: store_rmse(p, s)?,
                mape: store_mape(p, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mapes: Vec<f64> = per_store.iter().map(|s| s.mape).collect();
    Ok(MetricsReport {
        model: model.to_string(),
        ntae: ntae(p)?,
        win_rate: win_rate(p),
        p90_mape: p90_mape(&mapes),
        var_mape: var_mape(&mapes),
        excluded_rows: p.excluded_rows(),
        num_points: p.actual.len(),
        per_store,
    })
}

/// One report per model, sorted by NTAE ascending (ties by name). Every panel
/// must share stores, dates, actuals and baseline.
pub fn build_report(panels: &[(String, EvalPanel)]) -> Result<Vec<MetricsReport>> {
    if let Some((_, first)) = panels.first() {
        for (name, p) in &panels[1..] {
            if p.stores != first.stores || p.dates != first.dates {
                return Err(MetricsError::AlignmentMismatch(format!("{name} covers different stores or dates")));
            }
            if p.actual != first.actual || p.baseline != first.baseline {
                return Err(MetricsError::AlignmentMismatch(format!("{name} has different actuals")));
            }
        }
    }
    let mut reports = panels
        .iter()
        .map(|(name, p)| compute_report(name, p))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| a.ntae.total_cmp(&b.ntae).then_with(|| a.model.cmp(&b.model)));
    Ok(reports)
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    model: &'a str,
    ntae: f64,
    win_rate: f64,
    p90_mape: f64,
    var_mape: f64,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    comparison: Vec<ComparisonRow<'a>>,
    models: &'a [MetricsReport],
    metadata: &'a BTreeMap<String, serde_json::Value>,
}

/// Machine-readable report: comparison rows, full per-model metrics and
/// free-form run metadata.
pub fn report_json(reports: &[MetricsReport], metadata: &BTreeMap<String, serde_json::Value>) -> String {
    let doc = ReportDoc {
        comparison: reports
            .iter()
            .map(|r| ComparisonRow {
                model: &r.model,
                ntae: r.ntae,
                win_rate: r.win_rate,
                p90_mape: r.p90_mape,
                var_mape: r.var_mape,
            })
            .collect(),
        models: reports,
        metadata,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("report is serializable");
    s.push('\n');
    s
}

/// Aligned-column comparison table.
pub fn report_text(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>12}  {:>12}  {:>12}",
        "Model", "NTAE (%)", "Win Rate (%)", "P90 MAPE (%)", "Var MAPE"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>12.2}  {:>12.2}  {:>12.2}",
            r.model, r.ntae, r.win_rate, r.p90_mape, r.var_mape
        );
    }
    let excluded: usize = reports.iter().map(|r| r.excluded_rows).max().unwrap_or(0);
    let points = reports.first().map_or(0, |r| r.num_points);
    let _ = writeln!(out, "\n{points} evaluation points; {excluded} rows with non-positive sales excluded from MAPE/NTAE");
    out
}

/// `store,mae,rmse,mape` per store.
pub fn store_metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("store,mae,rmse,mape\n");
    for s in &report.per_store {
        let _ = writeln!(out, "{},{},{},{}", s.store, s.mae, s.rmse, s.mape);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|i| NaiveDate::from_ymd_opt(2012, 1, 6).unwrap() + chrono::Duration::weeks(i as i64))
            .collect()
    }

    fn single_store(y: &[f64], f: &[f64], b: &[f64]) -> EvalPanel {
        EvalPanel::new(vec![1], dates(y.len()), y.to_vec(), f.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn ntae_hand_example() {
        let p = EvalPanel::new(vec![1, 2], dates(1), vec![100.0, 100.0], vec![90.0, 110.0], vec![0.0; 2]).unwrap();
        assert!((ntae(&p).unwrap() - 10.0).abs() < 1e-12);
        let p = single_store(&[3.0, 4.0], &[3.0, 4.0], &[0.0, 0.0]);
        assert_eq!(ntae(&p).unwrap(), 0.0);
        let z = single_store(&[0.0], &[1.0], &[0.0]);
        assert_eq!(ntae(&z), Err(MetricsError::ZeroVolume));
    }

    #[test]
    fn per_store_hand_example() {
        let p = single_store(&[10.0, 20.0], &[12.0, 16.0], &[0.0, 0.0]);
        assert!((store_mae(&p, 0).unwrap() - 3.0).abs() < 1e-12);
        assert!((store_rmse(&p, 0).unwrap() - 10f64.sqrt()).abs() < 1e-12);
        assert!((store_mape(&p, 0).unwrap() - 20.0).abs() < 1e-12);
        let perfect = single_store(&[10.0, 20.0], &[10.0, 20.0], &[0.0, 0.0]);
        assert_eq!(store_mae(&perfect, 0).unwrap(), 0.0);
        assert_eq!(store_rmse(&perfect, 0).unwrap(), 0.0);
        assert_eq!(store_mape(&perfect, 0).unwrap(), 0.0);
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(p90_mape(&[5.0; 7]), 5.0);
        assert_eq!(var_mape(&[5.0; 7]), 0.0);
        let m: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((p90_mape(&m) - 9.1).abs() < 1e-12);
        assert!((var_mape(&m) - 8.25).abs() < 1e-12);
    }

    #[test]
    fn win_rate_examples() {
        let p = single_store(&[1.0, 2.0], &[3.0, 3.0], &[3.0, 3.0]);
        assert_eq!(win_rate(&p), 0.0);
        let p = single_store(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 3.0]);
        assert_eq!(win_rate(&p), 100.0);
    }

    #[test]
    fn non_positive_rows_are_excluded_and_counted() {
        let p = single_store(&[0.0, 10.0, -5.0], &[1.0, 12.0, 0.0], &[0.0; 3]);
        assert_eq!(p.excluded_rows(), 2);
        assert!((store_mape(&p, 0).unwrap() - 20.0).abs() < 1e-12);
        assert!((ntae(&p).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn report_sorting_and_perfect_model() {
        let y = vec![10.0, 20.0, 30.0, 40.0];
        let base = vec![11.0, 19.0, 33.0, 38.0];
        let mk = |f: Vec<f64>| EvalPanel::new(vec![1, 2], dates(2), y.clone(), f, base.clone()).unwrap();
        let reports = build_report(&[
            ("worse".into(), mk(vec![15.0, 25.0, 35.0, 45.0])),
            ("perfect".into(), mk(y.clone())),
        ])
        .unwrap();
        assert_eq!(reports[0].model, "perfect");
        let r = &reports[0];
        assert_eq!((r.ntae, r.p90_mape, r.var_mape), (0.0, 0.0, 0.0));
        assert_eq!(r.win_rate, 100.0);
        let text = report_text(&reports);
        for col in ["NTAE", "Win Rate", "P90 MAPE", "Var MAPE"] {
            assert!(text.contains(col));
        }
        let json: serde_json::Value = serde_json::from_str(&report_json(&reports, &BTreeMap::new())).unwrap();
        assert_eq!(json["comparison"][1]["model"], "worse");
        assert_eq!(store_metrics_csv(r).lines().count(), 3);
    }

    #[test]
    fn misaligned_panels_rejected() {
        let a = single_store(&[1.0], &[1.0], &[1.0]);
        let b = single_store(&[2.0], &[1.0], &[1.0]);
        assert!(matches!(
            build_report(&[("a".into(), a), ("b".into(), b)]),
            Err(MetricsError::AlignmentMismatch(_))
        ));
    }

    /// Independent loop implementation used as the oracle.
    fn brute(y: &[Vec<f64>], f: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let s_len = y[0].len();
        let t_len = y.len();
        let (mut abs_sum, mut vol, mut wins) = (0.0, 0.0, 0.0);
        for t in 0..t_len {
            for s in 0..s_len {
                abs_sum += (y[t][s] - f[t][s]).abs();
                vol += y[t][s];
                if (y[t][s] - f[t][s]).abs() < (y[t][s] - b[t][s]).abs() {
                    wins += 1.0;
                }
            }
        }
        let mut mae = vec![];
        let mut rmse = vec![];
        let mut mape = vec![];
        for s in 0..s_len {
            let mut a = 0.0;
            let mut q = 0.0;
            let mut m = 0.0;
            for t in 0..t_len {
                let e = y[t][s] - f[t][s];
                a += e.abs();
                q += e * e;
                m += e.abs() / y[t][s];
            }
            mae.push(a / t_len as f64);
            rmse.push((q / t_len as f64).sqrt());
            mape.push(m / t_len as f64 * 100.0);
        }
        (abs_sum / vol * 100.0, wins / (s_len * t_len) as f64 * 100.0, mae, rmse, mape)
    }

    fn panel_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..=10, 1usize..=20).prop_flat_map(|(s, t)| {
            let n = s * t;
            (
                Just(s),
                Just(t),
                prop::collection::vec(1.0f64..1e6, n),
                prop::collection::vec(0.0f64..1e6, n),
                prop::collection::vec(0.0f64..1e6, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force((s, t, y, f, b) in panel_strategy()) {
            let p = EvalPanel::new((1..=s as u32).collect(), dates(t), y.clone(), f.clone(), b.clone()).unwrap();
            let rows = |v: &[f64]| v.chunks(s).map(<[f64]>::to_vec).collect::<Vec<_>>();
            let (n, w, mae, rmse, mape) = brute(&rows(&y), &rows(&f), &rows(&b));
            let tol = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);
            prop_assert!(tol(ntae(&p).unwrap(), n));
            prop_assert!(tol(win_rate(&p), w));
            for si in 0..s {
                prop_assert!(tol(store_mae(&p, si).unwrap(), mae[si]));
                prop_assert!(tol(store_rmse(&p, si).unwrap(), rmse[si]));
                prop_assert!(tol(store_mape(&p, si).unwrap(), mape[si]));
                prop_assert!(store_rmse(&p, si).unwrap() >= store_mae(&p, si).unwrap() * (1.0 - 1e-12));
            }
        }

        #[test]
        fn scale_invariance((s, t, y, f, b) in panel_strategy(), k in 0.01f64..100.0) {
            let p = EvalPanel::new((1..=s as u32).collect(), dates(t), y.clone(), f.clone(), b.clone()).unwrap();
            let sc = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let q = EvalPanel::new(p.stores.clone(), p.dates.clone(), sc(&y), sc(&f), sc(&b)).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
            prop_assert!(close(ntae(&q).unwrap(), ntae(&p).unwrap()));
            for si in 0..s {
                prop_assert!(close(store_mape(&q, si).unwrap(), store_mape(&p, si).unwrap()));
                prop_assert!(close(store_mae(&q, si).unwrap(), k * store_mae(&p, si).unwrap()));
                prop_assert!(close(store_rmse(&q, si).unwrap(), k * store_rmse(&p, si).unwrap()));
            }
        }

        #[test]
        fn ntae_is_volume_weighted_mae((s, t, y, f, b) in panel_strategy()) {
            let p = EvalPanel::new((1..=s as u32).collect(), dates(t), y.clone(), f, b).unwrap();
            let total: f64 = y.iter().sum();
            let combined: f64 = (0..s).map(|si| store_mae(&p, si).unwrap() * t as f64).sum::<f64>() / total * 100.0;
            prop_assert!((ntae(&p).unwrap() - combined).abs() <= 1e-10 * combined.max(1.0));
        }
    }
}
