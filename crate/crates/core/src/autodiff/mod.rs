//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Inputs enter as
//! differentiable leaves or constants, each operation appends a node, and
//! [`Tape::backward`] returns gradients for every leaf.

mod gradcheck;
mod sparse;
mod tape;
mod tensor;
pub mod trig;

pub use gradcheck::grad_check;
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, Var, SQRT_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: input outside domain: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("tape is frozen; record a new tape for another forward pass")]
    Frozen,
}
