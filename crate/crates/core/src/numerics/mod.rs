//! Differentiable computation substrate: dense matrices, feed-forward
//! networks with reverse-mode gradients, the matrix exponential, concrete
//! relaxations and seeded randomness.

mod adam;
mod expm;
mod matrix;
mod nn;
mod relax;
mod rng;

pub use adam::Adam;
pub use expm::{matrix_exp, matrix_exp_frechet, matrix_exp_vjp};
pub(crate) use matrix::gemm;
pub use matrix::DenseMatrix;
pub use nn::{Activation, FeedForwardNet, ForwardTape, NetGradients};
pub use relax::{logistic_noise, relaxed_bernoulli_sample, relaxed_bernoulli_with_noise, sigmoid, softplus};
pub use rng::RandomSource;
