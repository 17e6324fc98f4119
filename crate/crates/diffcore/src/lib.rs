//! Dense rank-2 tensors with tape-based reverse-mode differentiation,
//! generic over the real scalar type.
//!
//! Covers what small probabilistic models need: MLPs, multi-head
//! cross-attention, inverted dropout and Gaussian log-densities.

mod error;
mod graph;
mod params;
mod rng;
mod scalar;
mod tensor;

pub use error::DiffError;
pub use graph::{gaussian_logpdf, gaussian_logpdf_checked, softmax_rows, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::{mix64, RngStream, ALGORITHM as RNG_ALGORITHM};
pub use scalar::{order_invariant_sum, pairwise_sum, sigmoid, softplus, Scalar};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;

#[cfg(test)]
mod tests;
