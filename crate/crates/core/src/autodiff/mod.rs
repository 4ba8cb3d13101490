//! Dense `f64` tensors and a tape-based reverse-mode differentiator.
//!
//! The primitive set is deliberately small: it covers exactly what the LSTM
//! decoders, the spatial attention and the teacher-forcing loss need.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use graph::{log_softmax_row, softmax_row, Gradients, Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("shape {shape:?} has a zero dimension")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: non-finite value produced (numeric overflow)")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("node {index} is not on this tape")]
    UnknownNode { index: usize },
    #[error("{op}: index {index} out of range (< {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
