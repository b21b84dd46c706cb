//! Numerical laboratory for a shallow encoder-only attention network:
//! forward pass, closed-form gradients, gradient-descent training,
//! empirical and limiting tangent kernels, Hessian spectral-norm
//! estimation, and verifiers for the convergence-bound constants.

pub mod bounds;
pub mod data;
pub mod error;
pub mod grad;
pub mod kernel;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
