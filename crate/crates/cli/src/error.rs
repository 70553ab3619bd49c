use std::path::PathBuf;

use storecast::autodiff::TensorError;
use storecast::baselines::BaselineError;
use storecast::dataset::DatasetError;
use storecast::features::FeatureError;
use storecast::graph_analysis::GraphError;
use storecast::metrics::MetricsError;
use storecast::stgnn::ModelError;
use storecast::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing prerequisite {}: run the producing command first", .0.display())]
    MissingPrerequisite(PathBuf),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::MissingPrerequisite(_) | CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingFile(p) => CliError::MissingPrerequisite(PathBuf::from(p)),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Checkpoint(_) | TensorError::Io(_) => CliError::Data(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::OverflowGuard(_) => CliError::Numerical(e.to_string()),
            ModelError::InvalidFraction(_) => CliError::Config(e.to_string()),
            ModelError::Tensor(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Config(m),
            TrainError::NotEnoughWindows(_) => CliError::Data(e.to_string()),
            TrainError::DivergenceDetected { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(t) => t.into(),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::NonConvergence(_) | BaselineError::SingularDesign(_) => CliError::Numerical(e.to_string()),
            BaselineError::Feature(f) => f.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}
