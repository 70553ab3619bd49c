//! Training loop for the graph model: full-batch AdamW on a Smooth L1
//! objective with a plateau learning-rate schedule.

use std::fmt::Write as _;

use log::info;
use thiserror::Error;

use crate::autodiff::{AdamW, AdamWConfig, Tape, Tensor, TensorError};
use crate::stgnn::{model_forward, reconstruct_sales, ModelError, ModelParams, WindowSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 training windows, have {0}")]
    NotEnoughWindows(usize),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub min_lr: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub smooth_l1_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 5,
            plateau_min_delta: 1e-6,
            min_lr: 1e-5,
            val_fraction_of_train: 0.1,
            seed: 42,
            smooth_l1_beta: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if !(0.0..0.5).contains(&self.val_fraction_of_train) {
            return bad("val_fraction_of_train must lie in [0, 0.5)");
        }
        if !(self.lr > 0.0) || !(self.min_lr >= 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.smooth_l1_beta > 0.0) {
            return bad("smooth_l1_beta must be positive");
        }
        Ok(())
    }
}

/// One record per epoch. Validation fields are `None` when the training set
/// was too small to carve out any validation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mae: f64,
    pub val_loss: Option<f64>,
    pub val_mae: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_mae,val_loss,val_mae,lr\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{},{},{:e}",
                r.epoch,
                r.train_loss,
                r.train_mae,
                opt(r.val_loss),
                opt(r.val_mae),
                r.lr
            );
        }
        out
    }
}

/// Number of training windows held out (from the chronological tail) for
/// validation.
pub fn validation_count(n_train: usize, fraction: f64) -> usize {
    let n_val = (fraction * n_train as f64).floor() as usize;
    // Never leave fewer than two windows to fit on.
    n_val.min(n_train.saturating_sub(2))
}

/// Reduce-on-plateau schedule keyed on a monitored loss.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    min_delta: f64,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_delta: f64, min_lr: f64) -> Self {
        Self {
            factor,
            patience,
            min_delta,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's monitored loss and returns the learning rate to use
    /// next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best - self.min_delta {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Loss and mean absolute error of the current parameters on `ws`, without
/// building gradients.
fn evaluate(params: &ModelParams, ws: &WindowSet, beta: f64) -> Result<(f64, f64)> {
    let pred = params.predict_diff(ws)?;
    let (mut loss, mut mae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(&ws.targets) {
        let d = (p - t).abs();
        loss += if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
        mae += d;
    }
    let n = pred.len() as f64;
    Ok((loss / n, mae / n))
}

/// Trains for exactly `cfg.epochs` full-batch steps. Returns the parameters of
/// the last epoch, the per-epoch history and the optimizer state.
pub fn train(
    windows: &WindowSet,
    mut params: ModelParams,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory, AdamW)> {
    cfg.validate()?;
    if windows.len() < 2 {
        return Err(TrainError::NotEnoughWindows(windows.len()));
    }
    let n_val = validation_count(windows.len(), cfg.val_fraction_of_train);
    let n_fit = windows.len() - n_val;
    let fit = windows.slice(0..n_fit);
    let val = (n_val > 0).then(|| windows.slice(n_fit..windows.len()));

    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &params.tensors,
    );
    let mut sched = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_min_delta, cfg.min_lr);
    let x: Tensor = fit.inputs_tensor(0..n_fit);
    let y: Tensor = fit.targets_tensor(0..n_fit);
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let lr = opt.lr();
        params.zero_grad();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pred = model_forward(&mut tape, xv, &p, &params.config)?;
        let loss = tape.smooth_l1(pred, yv, cfg.smooth_l1_beta)?;
        let train_loss = tape.value(loss).item();
        let train_mae = tape
            .value(pred)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / y.numel() as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        let grads = tape.backward(loss)?;
        for (v, t) in p.all().into_iter().zip(params.tensors.iter_mut()) {
            grads.accumulate_into(v, t);
        }
        opt.step(&mut params.tensors)?;
        if !params.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }

        let (val_loss, val_mae) = match &val {
            Some(v) => {
                let (l, m) = evaluate(&params, v, cfg.smooth_l1_beta)?;
                if !l.is_finite() {
                    return Err(TrainError::DivergenceDetected { epoch });
                }
                (Some(l), Some(m))
            }
            None => (None, None),
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_mae,
            val_loss,
            val_mae,
            lr,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        opt.set_lr(sched.step(monitored, lr));
        if epoch == 1 || epoch % 10 == 0 || epoch == cfg.epochs {
            info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?} lr {lr:e}");
        }
    }
    Ok((params, history, opt))
}

/// Dollar forecasts, `N x S` row-major, aligned with `windows.target_dates`.
pub fn predict(windows: &WindowSet, params: &ModelParams) -> Result<Vec<f64>> {
    let diff = params.predict_diff(windows)?;
    Ok(reconstruct_sales(&diff, &windows.bases)?)
}
