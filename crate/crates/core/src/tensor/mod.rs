//! Dense tensors, reverse-mode differentiation and the finite-difference
//! gradient oracle.

mod array;
mod gradcheck;
mod graph;
pub mod linalg;
mod ops;
mod rng;
mod scalar;

pub use array::Tensor;
pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use graph::{Graph, Var};
pub use ops::{concat_channels, Pointwise};
pub use rng::SeedRng;
pub use scalar::{DType, Scalar};
