//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation of one forward pass in execution order.
//! [`Graph::backward`] consumes the graph, walks the record in reverse and
//! returns the gradient of every leaf that asked for one. Nothing persists
//! between passes: parameters live in [`Tensor`]s owned by the caller and are
//! re-recorded as leaves on each pass.
//!
//! Broadcasting is limited to scalar-times-tensor and row-vector bias addition;
//! every other binary op requires identical shapes.

mod graph;
pub mod gradcheck;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have differing lengths")]
    Ragged,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty selection")]
    EmptySelection,
    /// A guarded denominator was zero. Callers treat this as "skip this term".
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("backward requires a one-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}

#[cfg(test)]
mod tests;
