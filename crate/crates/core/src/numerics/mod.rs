//! Dense `f64` tensors, a reverse-mode tape, Adam and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, Parameter};
pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{cosine_sim, matmul, softmax_nll, Tensor};

pub(crate) use tensor::norm;
#[cfg(test)]
pub(crate) use tensor::{sigmoid, softplus};

/// Cutoff below which a vector counts as zero for cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;
