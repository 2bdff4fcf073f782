//! Dense `f64` tensors with define-by-run reverse-mode differentiation.

pub mod check;
mod graph;
mod ops;
mod tensor;

pub use graph::{sigmoid, GradientMap, Graph, Var, GATHER_PAD};
pub use ops::{AttentionMask, MASKED_LOGIT};
pub use tensor::Tensor;
