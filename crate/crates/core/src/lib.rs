//! Regularized spatiotemporal covariance estimation with Kronecker product
//! expansions: operators, estimators, synthetic data, anomaly scoring and an
//! experiment driver.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod kron_ops;
pub mod linalg;
pub mod rng;
pub mod synth;

pub use error::{KronError, Result};
