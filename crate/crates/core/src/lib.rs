//! Multi-store weekly sales forecasting.
//!
//! The crate covers the whole pipeline from a raw Walmart-schema CSV to
//! evaluated forecasts:
//!
//! - [`dataset`]: CSV ingest, department aggregation and per-store imputation
//! - [`features`]: calendar, holiday, lag, rolling and EWMA features
//! - [`autodiff`]: a small dense tensor engine with reverse-mode gradients and AdamW
//! - [`stgnn`]: the spatiotemporal graph network (learned adjacency, dilated TCN, graph conv)
//! - [`trainer`]: the training loop with plateau learning-rate reduction
//! - [`baselines`]: persistence and per-store ARIMAX(1,0,1)
//! - [`metrics`]: NTAE, per-store MAE/RMSE/MAPE, P90 MAPE, MAPE variance, win rate
//! - [`graph_analysis`]: centrality and clustered reordering of the learned adjacency

pub mod autodiff;
pub mod baselines;
pub mod dataset;
pub mod features;
pub mod fsutil;
pub mod graph_analysis;
pub mod metrics;
pub mod stgnn;
pub mod synthetic;
pub mod trainer;

pub use dataset::{RawRecord, StorePanel, StoreSeries};
pub use features::FeatureMatrix;
pub use metrics::{EvalPanel, MetricsReport};
pub use stgnn::{ModelConfig, ModelParams, PanelTensors, WindowSet};
pub use trainer::{TrainConfig, TrainHistory};
