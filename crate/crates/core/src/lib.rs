//! Output-only modal analysis of under-determined vibrating systems.
//!
//! Time-lagged output covariance matrices are stacked into a third-order
//! tensor, which is factorized by variational Bayesian CP decomposition with
//! automatic rank determination. The retained rank equals the number of
//! active modes; the factor columns yield mode shapes and modal
//! auto-covariances, from which natural frequencies and damping ratios are
//! fitted.
//!
//! Module map:
//! - [`tensor`]: dense third-order tensors, unfoldings, Khatri-Rao, CP reconstruction
//! - [`covariance`]: signal blocks, lagged covariance, covariance tensor, signal CSV
//! - [`bcpf`]: Bayesian CP factorization engine
//! - [`modal`]: modal parameter extraction, MAC, mode pairing, identifiability bounds
//! - [`simulator`]: mass-spring chain benchmark and analytical modal oracle

pub mod bcpf;
pub mod covariance;
pub mod error;
pub mod modal;
pub mod simulator;
pub mod tensor;

pub use error::{OmaError, Result};
