//! A minimal dense-tensor engine with reverse-mode automatic
//! differentiation, sized for the forecasting network.
//!
//! A forward pass registers parameters on a fresh [`Tape`] with
//! [`Tape::leaf`], composes primitives, and calls [`Tape::backward`] on the
//! scalar loss. The returned [`Gradients`] are then accumulated into the
//! parameter tensors and consumed by [`AdamW`].

mod adamw;
pub mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("backward requires a one-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;
