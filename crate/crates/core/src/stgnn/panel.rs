use chrono::NaiveDate;
use log::warn;

use super::{ModelError, Result};
use crate::autodiff::Tensor;
use crate::features::{FeatureMatrix, TARGET};

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dense panel arrays. `T x S` arrays are row-major by time; `x` is
/// `T x S x F`. Entries of `y_diff` and `y_base` at `t = 0` are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTensors {
    pub stores: Vec<u32>,
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    pub y_raw: Vec<f64>,
    pub y_log: Vec<f64>,
    pub y_diff: Vec<f64>,
    pub y_base: Vec<f64>,
    pub x: Vec<f64>,
    pub scaler: Scaler,
    /// Feature rows `0..scaler_rows` were used to fit the scaler.
    pub scaler_rows: usize,
}

impl PanelTensors {
    pub fn num_weeks(&self) -> usize {
        self.dates.len()
    }

    pub fn num_stores(&self) -> usize {
        self.stores.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn at(&self, arr: &[f64], t: usize, s: usize) -> f64 {
        arr[t * self.num_stores() + s]
    }

    /// Builds the log-space arrays from raw sales (`T x S`) and unshifted,
    /// unscaled feature rows (`T x S x F`). The scaler is fit on the first
    /// `scaler_rows` feature rows; `x[t]` holds scaled row `t - 1`.
    pub fn from_arrays(
        stores: Vec<u32>,
        dates: Vec<NaiveDate>,
        feature_names: Vec<String>,
        y_raw: Vec<f64>,
        features: &[f64],
        scaler_rows: usize,
    ) -> Result<Self> {
        let (t_len, s_len, f_len) = (dates.len(), stores.len(), feature_names.len());
        if y_raw.len() != t_len * s_len || features.len() != t_len * s_len * f_len {
            return Err(ModelError::RaggedPanel(format!(
                "expected {t_len} x {s_len} sales and {t_len} x {s_len} x {f_len} features"
            )));
        }
        let mut y_log = Vec::with_capacity(y_raw.len());
        for (i, &v) in y_raw.iter().enumerate() {
            if v <= -1.0 {
                return Err(ModelError::DomainError {
                    store: stores[i % s_len],
                    date: dates[i / s_len],
                    value: v,
                });
            }
            y_log.push(v.ln_1p());
        }
        let mut y_diff = vec![f64::NAN; y_raw.len()];
        let mut y_base = vec![f64::NAN; y_raw.len()];
        for t in 1..t_len {
            for s in 0..s_len {
                let prev = y_log[(t - 1) * s_len + s];
                y_base[t * s_len + s] = prev;
                y_diff[t * s_len + s] = y_log[t * s_len + s] - prev;
            }
        }

        let fit_rows = scaler_rows.clamp(1, t_len.max(1));
        let n_fit = (fit_rows * s_len) as f64;
        let mut mean = vec![0.0; f_len];
        let mut std = vec![0.0; f_len];
        for row in features[..fit_rows * s_len * f_len].chunks(f_len) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n_fit);
        for row in features[..fit_rows * s_len * f_len].chunks(f_len) {
            for ((sd, m), v) in std.iter_mut().zip(&mean).zip(row) {
                *sd += (v - m).powi(2);
            }
        }
        for (f, sd) in std.iter_mut().enumerate() {
            *sd = (*sd / n_fit).sqrt();
            if !(*sd > 1e-12) {
                warn!("feature {} is constant over the scaler range; using std = 1", feature_names[f]);
                *sd = 1.0;
            }
        }

        let mut x = vec![0.0; features.len()];
        let plane = s_len * f_len;
        for t in 1..t_len {
            let src = &features[(t - 1) * plane..t * plane];
            let dst = &mut x[t * plane..(t + 1) * plane];
            for (i, (d, v)) in dst.iter_mut().zip(src).enumerate() {
                let f = i % f_len;
                *d = (v - mean[f]) / std[f];
            }
        }
        Ok(Self {
            stores,
            dates,
            feature_names,
            y_raw,
            y_log,
            y_diff,
            y_base,
            x,
            scaler: Scaler { mean, std },
            scaler_rows: fit_rows,
        })
    }
}

/// Model inputs: every feature column except the raw dollar target.
pub fn input_feature_names(fm: &FeatureMatrix) -> Vec<String> {
    fm.column_names()
        .filter(|n| *n != TARGET)
        .map(String::from)
        .collect()
}

/// Number of scaler rows so the fit only sees feature rows that feed
/// training-window inputs.
fn scaler_rows_for(t_len: usize, window: usize, train_fraction: f64) -> usize {
    let n_windows = t_len.saturating_sub(1).saturating_sub(window);
    let n_train = (train_fraction * n_windows as f64).floor() as usize;
    window + n_train
}

/// Restructures a feature table into the dense panel arrays.
pub fn build_panel_tensors(fm: &FeatureMatrix, train_fraction: f64, window: usize) -> Result<PanelTensors> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ModelError::InvalidFraction(train_fraction));
    }
    let ranges = fm.store_ranges();
    let Some((_, first)) = ranges.first() else {
        return Err(ModelError::RaggedPanel("empty feature table".into()));
    };
    let t_len = first.len();
    let dates = fm.dates[first.clone()].to_vec();
    for (store, r) in &ranges {
        if fm.dates[r.clone()] != dates[..] {
            return Err(ModelError::RaggedPanel(format!("store {store} has a different week grid")));
        }
    }
    if t_len < window + 2 {
        return Err(ModelError::TooShort { weeks: t_len, window });
    }
    let s_len = ranges.len();
    let names = input_feature_names(fm);
    let cols: Vec<&[f64]> = names.iter().map(|n| fm.require(n)).collect::<std::result::Result<_, _>>()?;
    let target = fm.require(TARGET)?;
    let f_len = names.len();
    let mut y_raw = vec![0.0; t_len * s_len];
    let mut feats = vec![0.0; t_len * s_len * f_len];
    for (s, (_, r)) in ranges.iter().enumerate() {
        for (t, row) in r.clone().enumerate() {
            y_raw[t * s_len + s] = target[row];
            for (f, c) in cols.iter().enumerate() {
                feats[(t * s_len + s) * f_len + f] = c[row];
            }
        }
    }
    PanelTensors::from_arrays(
        ranges.iter().map(|(s, _)| *s).collect(),
        dates,
        names,
        y_raw,
        &feats,
        scaler_rows_for(t_len, window, train_fraction),
    )
}

/// Rolling windows over the panel, laid out `(batch, features, stores, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub window: usize,
    pub num_stores: usize,
    pub num_features: usize,
    /// `N x F x S x L`.
    pub inputs: Vec<f64>,
    /// `N x S` next-step log-differences.
    pub targets: Vec<f64>,
    /// `N x S` previous log levels, used to reconstruct dollars.
    pub bases: Vec<f64>,
    /// Panel time index of each window's target.
    pub target_steps: Vec<usize>,
    pub target_dates: Vec<NaiveDate>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.target_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_steps.is_empty()
    }

    fn input_stride(&self) -> usize {
        self.num_features * self.num_stores * self.window
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> WindowSet {
        let (is, s) = (self.input_stride(), self.num_stores);
        WindowSet {
            window: self.window,
            num_stores: self.num_stores,
            num_features: self.num_features,
            inputs: self.inputs[range.start * is..range.end * is].to_vec(),
            targets: self.targets[range.start * s..range.end * s].to_vec(),
            bases: self.bases[range.start * s..range.end * s].to_vec(),
            target_steps: self.target_steps[range.clone()].to_vec(),
            target_dates: self.target_dates[range].to_vec(),
        }
    }

    pub fn inputs_tensor(&self, range: std::ops::Range<usize>) -> Tensor {
        let is = self.input_stride();
        Tensor::new(
            vec![range.len(), self.num_features, self.num_stores, self.window],
            self.inputs[range.start * is..range.end * is].to_vec(),
        )
        .expect("window layout is consistent")
    }

    pub fn targets_tensor(&self, range: std::ops::Range<usize>) -> Tensor {
        let s = self.num_stores;
        Tensor::new(vec![range.len(), s], self.targets[range.start * s..range.end * s].to_vec())
            .expect("window layout is consistent")
    }

    pub fn target_row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.num_stores..(i + 1) * self.num_stores]
    }

    pub fn base_row(&self, i: usize) -> &[f64] {
        &self.bases[i * self.num_stores..(i + 1) * self.num_stores]
    }
}

/// `N = (T - 1) - L` windows. Window `i` predicts the log-difference at panel
/// step `i + L + 1` from the `L` shifted feature steps ending at that step, so
/// the newest feature row it reads is the week before the target.
pub fn make_windows(pt: &PanelTensors, window: usize) -> Result<WindowSet> {
    let (t_len, s_len, f_len) = (pt.num_weeks(), pt.num_stores(), pt.num_features());
    if window == 0 || t_len < window + 2 {
        return Err(ModelError::TooShort { weeks: t_len, window });
    }
    let n = t_len - 1 - window;
    let mut inputs = vec![0.0; n * f_len * s_len * window];
    let mut targets = Vec::with_capacity(n * s_len);
    let mut bases = Vec::with_capacity(n * s_len);
    let mut target_steps = Vec::with_capacity(n);
    let mut target_dates = Vec::with_capacity(n);
    for i in 0..n {
        let tt = i + window + 1;
        let first = tt + 1 - window;
        let wbase = i * f_len * s_len * window;
        for l in 0..window {
            let t = first + l;
            for s in 0..s_len {
                for f in 0..f_len {
                    inputs[wbase + (f * s_len + s) * window + l] = pt.x[(t * s_len + s) * f_len + f];
                }
            }
        }
        targets.extend_from_slice(&pt.y_diff[tt * s_len..(tt + 1) * s_len]);
        bases.extend_from_slice(&pt.y_base[tt * s_len..(tt + 1) * s_len]);
        target_steps.push(tt);
        target_dates.push(pt.dates[tt]);
    }
    Ok(WindowSet {
        window,
        num_stores: s_len,
        num_features: f_len,
        inputs,
        targets,
        bases,
        target_steps,
        target_dates,
    })
}

/// Chronological split: the first `floor(fraction * N)` windows train.
pub fn split_windows(ws: &WindowSet, train_fraction: f64) -> Result<(WindowSet, WindowSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ModelError::InvalidFraction(train_fraction));
    }
    let n = ws.len();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n < 2 || n_train == 0 || n_train == n {
        return Err(ModelError::NotEnoughWindows { needed: 2, have: n });
    }
    Ok((ws.slice(0..n_train), ws.slice(n_train..n)))
}

/// `exp(base + diff) - 1` per store.
pub fn reconstruct_sales(diff: &[f64], base: &[f64]) -> Result<Vec<f64>> {
    diff.iter()
        .zip(base)
        .map(|(d, b)| {
            let level = b + d;
            if level > 700.0 || level.is_nan() {
                Err(ModelError::OverflowGuard(level))
            } else {
                Ok(level.exp_m1())
            }
        })
        .collect()
}
