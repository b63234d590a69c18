//! Dense kernels, activations and seeded random streams.

mod activation;
mod matrix;
mod rng;

pub use activation::{lrelu, lrelu_grad, lrelu_in_place, softmax, softmax_in_place, LRELU_SLOPE};
pub use matrix::{gaussian_matrix, matmul, Matrix};
pub(crate) use matrix::dot;
pub use rng::Rng;
