//! Spatiotemporal graph network over the store panel.
//!
//! Sales are modelled in log space as one-step log-differences. A learned
//! adjacency `A = softmax(ReLU(E1 E2^T))` mixes the per-store temporal
//! representations produced by a causal dilated TCN, and the predicted
//! log-difference is added back to the previous log level to get dollars.

mod model;
mod panel;

pub use model::{
    graph_learner, model_forward, tcn_forward, BoundParams, ModelConfig, ModelParams,
};
pub use panel::{
    build_panel_tensors, input_feature_names, make_windows, reconstruct_sales, split_windows,
    PanelTensors, Scaler, WindowSet,
};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::features::FeatureError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("panel is not a dense store x week grid: {0}")]
    RaggedPanel(String),
    #[error("series too short: {weeks} weeks cannot form a window of length {window}")]
    TooShort { weeks: usize, window: usize },
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("need at least {needed} windows, have {have}")]
    NotEnoughWindows { needed: usize, have: usize },
    #[error("store {store} week {date}: sales {value} <= -1 cannot be log-transformed")]
    DomainError {
        store: u32,
        date: chrono::NaiveDate,
        value: f64,
    },
    #[error("reconstructed log level {0} exceeds 700; the model has diverged")]
    OverflowGuard(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
