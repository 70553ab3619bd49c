//! Reference forecasters: one-step persistence and a per-store regression
//! with ARMA(1,1) errors fit by conditional sum of squares.

use std::fmt::Write as _;
use std::ops::Range;

use chrono::NaiveDate;
use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatrix, TARGET};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("CSS optimizer did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("invalid range {start}..{end} for a series of length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },
    #[error("exogenous matrix has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Exogenous regressors handed to the ARIMAX baseline. Target-derived
/// columns (lags, rolling statistics, EWMAs, log sales) are excluded, as are
/// `is_holiday` (the sum of the major and minor flags) and `day_of_week`
/// (constant on a weekly grid).
pub const DEFAULT_EXOG: [&str; 13] = [
    "temperature",
    "fuel_price",
    "cpi",
    "unemployment",
    "year",
    "month",
    "week_of_year",
    "week_sin",
    "week_cos",
    "month_sin",
    "month_cos",
    "is_major_holiday",
    "is_minor_holiday",
];

/// One-step persistence: the forecast for step `t` is `y[t - 1]`.
pub fn persistence_forecast(y: &[f64], test: Range<usize>) -> Result<Vec<f64>> {
    if test.start < 1 || test.end > y.len() || test.start > test.end {
        return Err(BaselineError::InvalidRange {
            start: test.start,
            end: test.end,
            len: y.len(),
        });
    }
    Ok(test.map(|t| y[t - 1]).collect())
}

/// Fitted `y_t = c + beta . x_t + u_t`, `u_t = phi u_{t-1} + theta e_{t-1} + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaxParams {
    pub c: f64,
    pub phi: f64,
    pub theta: f64,
    /// One coefficient per input column; dropped columns carry zero.
    pub beta: Vec<f64>,
    /// Innovation variance `CSS / n`.
    pub sigma2: f64,
    /// Which input columns entered the regression.
    pub kept: Vec<bool>,
    pub css: f64,
    pub iterations: usize,
}

impl ArimaxParams {
    fn regression(&self, x: &[f64]) -> f64 {
        self.c + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Optimizer knobs for [`fit_arimax_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Convergence when the relative CSS decrease falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Columns whose Gram-Schmidt residual norm (relative to their own norm)
    /// falls below this are treated as collinear and dropped.
    pub collinearity_threshold: f64,
    /// `|phi + theta|` below which the ARMA roots are treated as cancelling.
    pub cancellation_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
            collinearity_threshold: 1e-6,
            cancellation_threshold: 0.2,
        }
    }
}

/// Picks a linearly independent subset of standardized columns. Returns the
/// indices of kept columns.
fn independent_columns(cols: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = col.clone();
        for q in &basis {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm / norm0 > threshold {
            r.iter_mut().for_each(|v| *v /= norm);
            basis.push(r);
            kept.push(j);
        }
    }
    kept
}

/// Standardized working problem: `y` and each kept column centered and scaled
/// over the training rows.
struct Problem {
    y: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl Problem {
    fn n(&self) -> usize {
        self.y.len()
    }

    /// Parameter vector layout: `[c, gamma..., a, b]`, `phi = tanh(a)`,
    /// `theta = tanh(b)`.
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let k = self.z.len();
        let (phi, theta) = (p[k + 1].tanh(), p[k + 2].tanh());
        let (mut u_prev, mut e_prev) = (0.0, 0.0);
        let mut e = Vec::with_capacity(self.n());
        for t in 0..self.n() {
            let reg: f64 = p[0] + (0..k).map(|j| p[1 + j] * self.z[j][t]).sum::<f64>();
            let u = self.y[t] - reg;
            let et = u - phi * u_prev - theta * e_prev;
            e.push(et);
            u_prev = u;
            e_prev = et;
        }
        e
    }

    fn css(&self, p: &[f64]) -> f64 {
        self.residuals(p).iter().map(|v| v * v).sum()
    }

    /// Residuals and their Jacobian (`n x m`, row-major) via the forward
    /// recursion of the derivatives.
    fn jacobian(&self, p: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.z.len();
        let m = k + 3;
        let (phi, theta) = (p[k + 1].tanh(), p[k + 2].tanh());
        let mut jac = DMatrix::zeros(self.n(), m);
        let mut e = Vec::with_capacity(self.n());
        let (mut u_prev, mut e_prev) = (0.0, 0.0);
        let mut d_prev = vec![0.0; m];
        for t in 0..self.n() {
            let reg: f64 = p[0] + (0..k).map(|j| p[1 + j] * self.z[j][t]).sum::<f64>();
            let u = self.y[t] - reg;
            let et = u - phi * u_prev - theta * e_prev;
            let has_prev = if t > 0 { 1.0 } else { 0.0 };
            let mut d = vec![0.0; m];
            d[0] = -1.0 + phi * has_prev - theta * d_prev[0];
            for j in 0..k {
                let zprev = if t > 0 { self.z[j][t - 1] } else { 0.0 };
                d[1 + j] = -self.z[j][t] + phi * zprev - theta * d_prev[1 + j];
            }
            // Derivatives with respect to phi and theta; chained to (a, b) below.
            d[k + 1] = -u_prev - theta * d_prev[k + 1];
            d[k + 2] = -e_prev - theta * d_prev[k + 2];
            for (col, v) in d.iter().enumerate() {
                let scale = if col == k + 1 {
                    1.0 - phi * phi
                } else if col == k + 2 {
                    1.0 - theta * theta
                } else {
                    1.0
                };
                jac[(t, col)] = v * scale;
            }
            e.push(et);
            d_prev = d;
            u_prev = u;
            e_prev = et;
        }
        (e, jac)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits on rows `train` of `y` with exogenous matrix `x` (`y.len() x k`,
/// row-major) using default options.
pub fn fit_arimax(y: &[f64], x: &[f64], k: usize, train: Range<usize>) -> Result<ArimaxParams> {
    fit_arimax_with(y, x, k, train, &FitOptions::default())
}

pub fn fit_arimax_with(
    y: &[f64],
    x: &[f64],
    k: usize,
    train: Range<usize>,
    opts: &FitOptions,
) -> Result<ArimaxParams> {
    if x.len() != y.len() * k {
        return Err(BaselineError::ShapeMismatch {
            expected: y.len() * k,
            got: x.len(),
        });
    }
    if train.end > y.len() || train.start >= train.end {
        return Err(BaselineError::InvalidRange {
            start: train.start,
            end: train.end,
            len: y.len(),
        });
    }
    let yt = &y[train.clone()];
    let n = yt.len();
    if yt.iter().chain(&x[train.start * k..train.end * k]).any(|v| !v.is_finite()) {
        return Err(BaselineError::SingularDesign("non-finite training values".into()));
    }

    let (y_mean, y_sd) = mean_std(yt);
    let y_sd = if y_sd > 0.0 { y_sd } else { 1.0 };
    let mut col_stats = Vec::with_capacity(k);
    let mut z_all = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = train.clone().map(|t| x[t * k + j]).collect();
        let (m, s) = mean_std(&col);
        col_stats.push((m, s));
        let scale = if s > 0.0 { s } else { 1.0 };
        z_all.push(col.iter().map(|v| (v - m) / scale).collect::<Vec<_>>());
    }
    let kept_idx = independent_columns(&z_all, opts.collinearity_threshold);
    let mut kept = vec![false; k];
    kept_idx.iter().for_each(|&j| kept[j] = true);
    if kept_idx.len() < k {
        debug!("dropped {} collinear or constant exogenous columns", k - kept_idx.len());
    }
    let prob = Problem {
        y: yt.iter().map(|v| (v - y_mean) / y_sd).collect(),
        z: kept_idx.iter().map(|&j| z_all[j].clone()).collect(),
    };
    let kk = prob.z.len();
    let m = kk + 3;
    if n <= m {
        return Err(BaselineError::SingularDesign(format!(
            "{n} training observations for {m} parameters"
        )));
    }

    // Ordinary least squares start; the intercept of centered data is zero
    // and the kept columns are orthogonal to it.
    let mut p = vec![0.0; m];
    if kk > 0 {
        let zm = DMatrix::from_fn(n, kk, |t, j| prob.z[j][t]);
        let yv = DVector::from_column_slice(&prob.y);
        let gram = zm.transpose() * &zm;
        let rhs = zm.transpose() * yv;
        let sol = gram
            .cholesky()
            .ok_or_else(|| BaselineError::SingularDesign("exogenous Gram matrix is not positive definite".into()))?
            .solve(&rhs);
        p[1..=kk].copy_from_slice(sol.as_slice());
    }

    let start = p.clone();
    let mut css = prob.css(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = css == 0.0;
    while !converged {
        if iterations >= opts.max_iterations {
            return Err(BaselineError::NonConvergence(iterations));
        }
        iterations += 1;
        let (e, jac) = prob.jacobian(&p);
        let ev = DVector::from_column_slice(&e);
        let jt = jac.transpose();
        let grad = &jt * ev;
        let hess = &jt * &jac;
        loop {
            let mut damped = hess.clone();
            for i in 0..m {
                damped[(i, i)] += lambda * hess[(i, i)].max(1e-12);
            }
            let step = damped.lu().solve(&(-&grad));
            let trial: Option<Vec<f64>> = step.map(|s| p.iter().zip(s.iter()).map(|(a, b)| a + b).collect());
            let trial_css = trial.as_ref().map_or(f64::INFINITY, |t| prob.css(t));
            if trial_css < css {
                let decrease = css - trial_css;
                p = trial.unwrap();
                lambda = (lambda / 3.0).max(1e-12);
                converged = decrease <= opts.tolerance * css || trial_css == 0.0;
                css = trial_css;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // No descent direction left: stationary to working precision.
                converged = true;
                break;
            }
        }
    }

    // Near-cancelling AR and MA roots leave phi and theta unidentified along
    // the ridge phi = -theta; fall back to the regression-only start when the
    // dynamics buy less than the parameter cost they carry.
    if (p[kk + 1].tanh() + p[kk + 2].tanh()).abs() < opts.cancellation_threshold {
        let css0 = prob.css(&start);
        if n as f64 * (css0 / css).ln() < 4.0 {
            debug!("ARMA roots cancel; reporting zero dynamics");
            p = start;
            css = css0;
        }
    }

    // Back to original units.
    let mut beta = vec![0.0; k];
    let mut c = y_mean + y_sd * p[0];
    for (i, &j) in kept_idx.iter().enumerate() {
        let (mj, sj) = col_stats[j];
        let sj = if sj > 0.0 { sj } else { 1.0 };
        beta[j] = y_sd * p[1 + i] / sj;
        c -= beta[j] * mj;
    }
    let css_orig = css * y_sd * y_sd;
    Ok(ArimaxParams {
        c,
        phi: p[kk + 1].tanh(),
        theta: p[kk + 2].tanh(),
        beta,
        sigma2: css_orig / n as f64,
        kept,
        css: css_orig,
        iterations,
    })
}

/// Conditional sum of squares of `params` over rows `range`, starting the
/// recursion from zero at `range.start`.
pub fn arimax_css(params: &ArimaxParams, y: &[f64], x: &[f64], range: Range<usize>) -> f64 {
    let k = params.beta.len();
    let (mut u_prev, mut e_prev) = (0.0, 0.0);
    let mut css = 0.0;
    for t in range {
        let u = y[t] - params.regression(&x[t * k..(t + 1) * k]);
        let e = u - params.phi * u_prev - params.theta * e_prev;
        css += e * e;
        u_prev = u;
        e_prev = e;
    }
    css
}

/// One-step-ahead forecasts for steps in `test`, running the error recursion
/// from the start of the series on true values of `y`.
pub fn arimax_forecast(params: &ArimaxParams, y: &[f64], x: &[f64], test: Range<usize>) -> Result<Vec<f64>> {
    let k = params.beta.len();
    if test.end > y.len() || test.start > test.end || x.len() < test.end * k {
        return Err(BaselineError::InvalidRange {
            start: test.start,
            end: test.end,
            len: y.len(),
        });
    }
    let (mut u_prev, mut e_prev) = (0.0, 0.0);
    let mut out = Vec::with_capacity(test.len());
    for t in 0..test.end {
        let reg = params.regression(&x[t * k..(t + 1) * k]);
        let pred = reg + params.phi * u_prev + params.theta * e_prev;
        if t >= test.start {
            out.push(pred);
        }
        u_prev = y[t] - reg;
        e_prev = y[t] - pred;
    }
    Ok(out)
}

/// Fitted parameters and test-range forecasts for one store.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreArimax {
    pub store: u32,
    pub params: ArimaxParams,
    pub dates: Vec<NaiveDate>,
    pub forecasts: Vec<f64>,
    pub actuals: Vec<f64>,
}

/// Fits every store on its first `floor(train_fraction * T)` weeks and
/// forecasts the remainder. Stores are fit in parallel; results keep store
/// order.
pub fn fit_arimax_panel(fm: &FeatureMatrix, exog: &[&str], train_fraction: f64) -> Result<Vec<StoreArimax>> {
    let target = fm.require(TARGET)?;
    let cols: Vec<&[f64]> = exog.iter().map(|n| fm.require(n)).collect::<std::result::Result<_, _>>()?;
    let k = cols.len();
    let jobs: Vec<(u32, Range<usize>)> = fm.store_ranges();
    let fit_one = |(store, rows): &(u32, Range<usize>)| -> Result<StoreArimax> {
        let y = &target[rows.clone()];
        let mut x = Vec::with_capacity(y.len() * k);
        for r in rows.clone() {
            x.extend(cols.iter().map(|c| c[r]));
        }
        let n_train = (train_fraction * y.len() as f64).floor() as usize;
        let params = fit_arimax(y, &x, k, 0..n_train).inspect_err(|e| warn!("store {store}: {e}"))?;
        let forecasts = arimax_forecast(&params, y, &x, n_train..y.len())?;
        Ok(StoreArimax {
            store: *store,
            params,
            dates: fm.dates[rows.start + n_train..rows.end].to_vec(),
            forecasts,
            actuals: y[n_train..].to_vec(),
        })
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    if threads <= 1 {
        return jobs.iter().map(fit_one).collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<Result<StoreArimax>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(fit_one).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("ARIMAX worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// `store,c,phi,theta,sigma2,css,iterations,beta_<name>...` with one row per
/// store; dropped columns are written as empty cells.
pub fn params_to_csv_string(fits: &[StoreArimax], exog: &[&str]) -> String {
    let mut out = String::from("store,c,phi,theta,sigma2,css,iterations");
    for name in exog {
        let _ = write!(out, ",beta_{name}");
    }
    out.push('\n');
    for f in fits {
        let p = &f.params;
        let _ = write!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{}",
            f.store, p.c, p.phi, p.theta, p.sigma2, p.css, p.iterations
        );
        for (b, kept) in p.beta.iter().zip(&p.kept) {
            if *kept {
                let _ = write!(out, ",{b:e}");
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}
