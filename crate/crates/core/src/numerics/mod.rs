//! Dense tensors with a reverse-mode tape, sized for small transformers.

mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_many, gradient_report, relative_error, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("non-finite result in {op}")]
    Overflow { op: &'static str },
    #[error("backward called on a graph that is not recording")]
    NoTape,
}
