//! Dense tensors, a reverse-mode tape for the operator set the networks use,
//! and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use tensor::{Element, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{0}")]
    Argument(String),
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward already ran on this graph; record a new forward pass")]
    BackwardTwice,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
