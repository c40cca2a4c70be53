//! Dense tensors, kernels with hand-derived gradients, a reverse-mode tape,
//! and a finite-difference gradient checker.

mod bitmatrix;
pub mod gradcheck;
pub mod graph;
pub mod ops;
mod tensor;

pub use bitmatrix::BitMatrix;
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{AttentionSpec, Graph, GraphStats, ParamGrads, Var};
pub use ops::{cross_entropy, layer_norm, matmul, softmax_rows};
pub use tensor::{Param, Scalar, Tensor, SCALAR_DTYPE};
