use serde::{Deserialize, Serialize};

use crate::error::{KronError, Result};

/// How the shrinkage intensity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSetting {
    Fixed(f64),
    Mode(RhoMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoMode {
    /// Closed-form plug-in: Ledoit-Wolf for the Gaussian estimators, the
    /// elliptical oracle formula for the Tyler estimators.
    Auto,
    /// Held-out likelihood over [`CV_RHO_GRID`] (Tyler estimators only).
    Cv,
}

impl Default for RhoSetting {
    fn default() -> Self {
        RhoSetting::Mode(RhoMode::Auto)
    }
}

/// Candidate intensities for cross-validated shrinkage.
pub const CV_RHO_GRID: [f64; 9] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Maximum number of Kronecker terms.
    pub r: usize,
    /// Nuclear-norm weight.
    pub beta: f64,
    pub rho: RhoSetting,
    pub toeplitz: bool,
    pub diag_correct: bool,
    /// Relative Frobenius change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            r: 1,
            beta: 0.0,
            rho: RhoSetting::default(),
            toeplitz: true,
            diag_correct: false,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(KronError::InvalidParameter("r must be at least 1".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(KronError::InvalidParameter(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let RhoSetting::Fixed(rho) = self.rho {
            if !(0.0..=1.0).contains(&rho) {
                return Err(KronError::InvalidParameter(format!("rho must lie in [0, 1], got {rho}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(KronError::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(KronError::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = RhoSetting::Fixed(rho);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityMethod {
    Explicit,
    LwPlugin,
    /// Elliptical-distribution oracle formula with a plug-in shape.
    EllipticalPlugin,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageIntensity {
    pub rho: f64,
    pub method: IntensityMethod,
}

impl ShrinkageIntensity {
    /// Clamps `rho` into `[0, 1]`.
    pub fn new(rho: f64, method: IntensityMethod) -> Self {
        Self {
            rho: rho.clamp(0.0, 1.0),
            method,
        }
    }

    pub fn explicit(rho: f64) -> Self {
        Self::new(rho, IntensityMethod::Explicit)
    }
}
