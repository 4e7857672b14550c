//! Hierarchical-matrix engine for large dense Matern covariance matrices.
//!
//! The crate approximates an `n x n` Matern covariance matrix in hierarchical
//! (H-matrix) form, where admissible off-diagonal blocks are stored as low-rank
//! factor pairs produced by adaptive cross approximation. On top of the
//! compressed representation it provides symmetric (LDL / Cholesky)
//! factorization, triangular solves, log-determinants, and the joint Gaussian
//! log-likelihood in log-linear time, plus derivative-free maximization of the
//! likelihood over the Matern parameters (variance, range, smoothness).
//!
//! Module map:
//! - [`geometry`]: point sets, cluster trees, block cluster trees, permutations
//! - [`kernel`]: Matern covariance family and the modified Bessel function
//! - [`lowrank`]: low-rank blocks, ACA, truncated-SVD recompression
//! - [`hmatrix`]: the H-matrix container, arithmetic, factorization, metrics
//! - [`likelihood`]: exact and H-approximated Gaussian log-likelihood
//! - [`estimate`]: Nelder-Mead / Brent optimizers, simulation, replicate studies

pub mod error;
pub mod estimate;
pub mod geometry;
pub mod hmatrix;
pub mod kernel;
pub mod likelihood;
pub mod lowrank;

pub use error::{Error, Result};

// dense fallback types (DMatrix and friends) used in public oracle signatures
pub use nalgebra;
