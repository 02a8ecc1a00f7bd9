//! Covariance estimators: sample covariance, Ledoit-Wolf shrinkage, KronPCA
//! variants and Tyler-type robust shape estimators.

mod config;
mod kronpca;
mod shrinkage;
mod svt;
mod tyler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{EstimatorConfig, IntensityMethod, RhoMode, RhoSetting, ShrinkageIntensity, CV_RHO_GRID};
pub use kronpca::{
    dc_kronpca, energy_count, fit_kron_model, kron_spectrum, kronpca, kronpca_temporal, set_diag_correction,
    toeplitz_average, KronFactor, KronFactorJson, KronModel, KronModelJson, KronSpectrum, TEMPORAL_EIGEN_FLOOR,
};
pub use shrinkage::{centered, elliptical_intensity, lw_intensity, scm, shrink};
pub use svt::{monotonicity_stats, objective_is_monotone, soft_impute, svt, svt_factors, SoftImpute, Thresholded};
pub use tyler::{
    chen_tyler, flipflop_spatial, normalize_samples, plugin_shape, robust_intensity, robust_kronpca, select_rho_cv,
    RobustDiagnostics, RobustFit, RobustKind, CV_FOLDS,
};

use crate::error::{KronError, Result};
use crate::kron_ops::DenseCovariance;
use crate::synth::SampleSet;

/// DC-KronPCA followed by identity shrinkage with the Ledoit-Wolf intensity
/// evaluated at the DC-KronPCA estimate.
#[derive(Debug, Clone)]
pub struct DcKronLw {
    pub sigma: DenseCovariance,
    pub model: KronModel,
    pub rho: ShrinkageIntensity,
}

/// Diagonal correction is always on here, whatever `cfg.diag_correct` says;
/// an explicit `cfg.rho` replaces the plug-in intensity.
pub fn dc_kronpca_lw(samples: &SampleSet, cfg: &EstimatorConfig) -> Result<DcKronLw> {
    if samples.n() < 2 {
        return Err(KronError::InsufficientData { required: 2, actual: samples.n() });
    }
    let cfg = EstimatorConfig { diag_correct: true, ..cfg.clone() };
    let model = dc_kronpca(&scm(samples)?, &cfg)?;
    let kron = model.covariance();
    let rho = match cfg.rho {
        RhoSetting::Fixed(r) => ShrinkageIntensity::explicit(r),
        RhoSetting::Mode(RhoMode::Auto) => lw_intensity(samples, &kron)?,
        RhoSetting::Mode(RhoMode::Cv) => {
            return Err(KronError::InvalidParameter("rho = \"cv\" is only supported by the Tyler estimators".into()))
        }
    };
    Ok(DcKronLw { sigma: shrink(&kron, rho), model, rho })
}

/// Named estimators exposed to experiment configs and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Scm,
    ScmLw,
    Kronpca,
    DcKronpcaLw,
    ChenTyler,
    TylerKronpca,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Scm,
        EstimatorKind::ScmLw,
        EstimatorKind::Kronpca,
        EstimatorKind::DcKronpcaLw,
        EstimatorKind::ChenTyler,
        EstimatorKind::TylerKronpca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Scm => "scm",
            EstimatorKind::ScmLw => "scm-lw",
            EstimatorKind::Kronpca => "kronpca",
            EstimatorKind::DcKronpcaLw => "dc-kronpca-lw",
            EstimatorKind::ChenTyler => "chen-tyler",
            EstimatorKind::TylerKronpca => "tyler-kronpca",
        }
    }

    /// Whether the estimator returns a trace-normalized shape rather than a covariance.
    pub fn is_shape(self) -> bool {
        matches!(self, EstimatorKind::ChenTyler | EstimatorKind::TylerKronpca)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = KronError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KronError::InvalidParameter(format!("unknown estimator {s:?}")))
    }
}

/// Result of [`estimate`].
#[derive(Debug, Clone)]
pub struct Estimate {
    pub kind: EstimatorKind,
    pub sigma: DenseCovariance,
    pub model: Option<KronModel>,
    pub rho: Option<ShrinkageIntensity>,
    pub iterations: usize,
    pub converged: bool,
    /// Last soft-impute objective, when one was tracked.
    pub objective: Option<f64>,
}

pub fn estimate(kind: EstimatorKind, samples: &SampleSet, cfg: &EstimatorConfig) -> Result<Estimate> {
    cfg.validate()?;
    let plain = |sigma, rho| Estimate {
        kind,
        sigma,
        model: None,
        rho,
        iterations: 1,
        converged: true,
        objective: None,
    };
    match kind {
        EstimatorKind::Scm => Ok(plain(scm(samples)?, None)),
        EstimatorKind::ScmLw => {
            let s = scm(samples)?;
            let rho = match cfg.rho {
                RhoSetting::Fixed(r) => ShrinkageIntensity::explicit(r),
                _ => lw_intensity(samples, &s)?,
            };
            Ok(plain(shrink(&s, rho), Some(rho)))
        }
        EstimatorKind::Kronpca => {
            let model = fit_kron_model(&scm(samples)?, cfg)?;
            Ok(from_model(kind, model.covariance(), model, None))
        }
        EstimatorKind::DcKronpcaLw => {
            let fit = dc_kronpca_lw(samples, cfg)?;
            Ok(from_model(kind, fit.sigma, fit.model, Some(fit.rho)))
        }
        EstimatorKind::ChenTyler | EstimatorKind::TylerKronpca => {
            let robust = if kind == EstimatorKind::ChenTyler { RobustKind::ChenTyler } else { RobustKind::KronTyler };
            let rho = robust_intensity(samples, robust, cfg)?;
            let fit = match robust {
                RobustKind::ChenTyler => chen_tyler(samples, rho, cfg)?,
                RobustKind::KronTyler => robust_kronpca(samples, rho, cfg)?,
            };
            Ok(Estimate {
                kind,
                sigma: fit.sigma,
                model: None,
                rho: Some(fit.rho),
                iterations: fit.iterations,
                converged: fit.converged,
                objective: None,
            })
        }
    }
}

fn from_model(kind: EstimatorKind, sigma: DenseCovariance, model: KronModel, rho: Option<ShrinkageIntensity>) -> Estimate {
    Estimate {
        kind,
        sigma,
        iterations: model.iterations,
        converged: model.converged,
        objective: model.objective_trace.last().copied(),
        model: Some(model),
        rho,
    }
}
