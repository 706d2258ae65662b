//! Bayesian tensor-network kernel machines with CPD-constrained weights.
//!
//! Training runs alternating least squares on the cores, hyperparameters are
//! updated by variational Gamma factors, and posterior uncertainty comes from
//! a Laplace approximation with one of five Hessian approximations.

pub mod als;
pub mod cpd;
pub mod data;
pub mod error;
pub mod experiment;
pub mod hessian;
pub mod inference;
pub mod metrics;
pub mod oracle;
pub mod predictive;

pub use error::{Error, Result};
