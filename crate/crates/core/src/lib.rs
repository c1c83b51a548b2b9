//! Stochastically weak (Phi-norm) formulations of second-order elliptic
//! problems on `(0,1)^d`, `d <= 3`.
//!
//! The crate provides the Dirichlet-Laplacian spectral basis, a DST-I
//! Whittle-Matern test-function sampler, exact and empirical weak norms, a
//! modified MLP with domain-aware features and exact input derivatives, the
//! manufactured benchmark problems, optimisers and training loop, and
//! executable studies of the estimator's convergence behaviour.

pub mod basis;
pub mod dst;
pub mod error;
pub mod jet;
pub mod net;
pub mod norms;
pub mod problems;
pub mod sampler;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
