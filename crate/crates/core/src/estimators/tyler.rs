//! Tyler-type robust shape estimation with identity shrinkage, unstructured
//! and Kronecker-projected.
//!
//! Both estimators work on the norm-normalized samples `s_i = x_i / ‖x_i‖`,
//! with location taken as zero: the inputs are expected to be centered or
//! detrended by the caller, so the output depends on each sample only through
//! its direction.

use nalgebra::DMatrix;
use serde::Serialize;

use super::config::{EstimatorConfig, IntensityMethod, RhoMode, RhoSetting, ShrinkageIntensity, CV_RHO_GRID};
use super::kronpca::kronpca_temporal;
use super::shrinkage::elliptical_intensity;
use crate::error::{KronError, Result};
use crate::kron_ops::{DenseCovariance, SpaceTimeDims};
use crate::linalg;
use crate::synth::SampleSet;

/// Output of a robust estimator: a trace-`pT` shape matrix plus diagnostics.
#[derive(Debug, Clone)]
pub struct RobustFit {
    pub sigma: DenseCovariance,
    pub rho: ShrinkageIntensity,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    /// Kronecker factors of the final estimate before shrinkage (robust KronPCA only).
    pub kron_factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustDiagnostics {
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
}

impl RobustFit {
    pub fn diagnostics(&self) -> RobustDiagnostics {
        RobustDiagnostics {
            rho: self.rho.rho,
            iterations: self.iterations,
            converged: self.converged,
            final_change: self.final_change,
        }
    }
}

/// Columns scaled to unit Euclidean norm.
pub fn normalize_samples(samples: &SampleSet) -> Result<DMatrix<f64>> {
    let mut s = samples.data.clone();
    for (i, mut c) in s.column_iter_mut().enumerate() {
        let norm = c.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(KronError::ZeroSample(i));
        }
        c /= norm;
    }
    Ok(s)
}

/// `(N/n) Σ_i s_i s_iᵀ / (s_iᵀ Σ⁻¹ s_i)`.
fn tyler_update(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (dim, n) = s.shape();
    let chol = linalg::cholesky(sigma)?;
    let q = linalg::quad_forms(&chol, s);
    let mut w = s.clone();
    for (mut c, qi) in w.column_iter_mut().zip(q) {
        c /= qi.sqrt();
    }
    Ok(&w * w.transpose() * (dim as f64 / n as f64))
}

/// `(1 − ρ)·(N/tr A)·A + ρI`: trace `N`, smallest eigenvalue at least `ρ` for PSD `A`.
fn shrink_to_trace(a: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let dim = a.nrows();
    let mut out = a * ((1.0 - rho) * dim as f64 / a.trace());
    for i in 0..dim {
        out[(i, i)] += rho;
    }
    linalg::symmetrize(&out)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(KronError::InvalidParameter(format!(
            "robust shrinkage needs rho in (0, 1], got {rho}"
        )));
    }
    Ok(())
}

struct CoreFit {
    sigma: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    change: f64,
    factors: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn chen_core(s: &DMatrix<f64>, rho: f64, cfg: &EstimatorConfig) -> Result<CoreFit> {
    let dim = s.nrows();
    let mut sigma = DMatrix::identity(dim, dim);
    let mut change = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let next = shrink_to_trace(&tyler_update(s, &sigma)?, rho);
        change = linalg::relative_change(&next, &sigma);
        sigma = next;
        if change < cfg.tol {
            return Ok(CoreFit { sigma, iterations: it, converged: true, change, factors: None });
        }
    }
    log::warn!("Chen-Tyler iterations did not converge: relative change {change:.3e}");
    Ok(CoreFit { sigma, iterations: cfg.max_iter, converged: false, change, factors: None })
}

fn flipflop_core(sigma_tilde: &DMatrix<f64>, t_inv: &DMatrix<f64>, dims: SpaceTimeDims) -> DMatrix<f64> {
    let SpaceTimeDims { p, t } = dims;
    let mut out = DMatrix::zeros(p, p);
    for i in 0..t {
        for j in 0..t {
            let w = t_inv[(i, j)];
            if w != 0.0 {
                out += sigma_tilde.view((j * p, i * p), (p, p)) * w;
            }
        }
    }
    linalg::symmetrize(&(out / t as f64))
}

/// Spatial factor with the temporal factor held fixed:
/// `(1/T) Σ_{i,j} [T̂⁻¹]_{ij} Σ̃_{(j,i)}`.
pub fn flipflop_spatial(sigma_tilde: &DenseCovariance, t_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dims = sigma_tilde.dims();
    if t_hat.shape() != (dims.t, dims.t) {
        return Err(crate::error::shape_err((dims.t, dims.t), t_hat.shape()));
    }
    let t_inv = linalg::spd_inverse(t_hat)?;
    Ok(flipflop_core(sigma_tilde.matrix(), &t_inv, dims))
}

fn robust_core(s: &DMatrix<f64>, dims: SpaceTimeDims, rho: f64, cfg: &EstimatorConfig) -> Result<CoreFit> {
    let chen = chen_core(s, rho, cfg)?;
    let mut sigma_hat = chen.sigma;
    let mut sigma_tilde = DenseCovariance::symmetrized(dims, &sigma_hat)?;
    let mut t_prev: Option<DMatrix<f64>> = None;
    let mut total = chen.iterations;
    let mut factors = None;
    let mut outer_change = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let t_hat = kronpca_temporal(&sigma_tilde)?;
        let t_inv = linalg::spd_inverse(&t_hat)?;
        let mut inner_converged = false;
        for _ in 0..cfg.max_iter {
            total += 1;
            let update = tyler_update(s, &sigma_hat)?;
            let s_hat = flipflop_core(&update, &t_inv, dims);
            let next = shrink_to_trace(&linalg::kron(&t_hat, &s_hat), rho);
            let change = linalg::relative_change(&next, &sigma_hat);
            sigma_hat = next;
            sigma_tilde = DenseCovariance::symmetrized(dims, &update)?;
            factors = Some((t_hat.clone(), s_hat));
            if change < cfg.tol {
                inner_converged = true;
                break;
            }
        }
        if !inner_converged {
            log::warn!("robust KronPCA inner loop hit the iteration cap");
        }
        if let Some(prev) = &t_prev {
            outer_change = linalg::relative_change(&t_hat, prev);
            if outer_change < cfg.tol {
                return Ok(CoreFit { sigma: sigma_hat, iterations: total, converged: inner_converged, change: outer_change, factors });
            }
        }
        t_prev = Some(t_hat);
    }
    log::warn!("robust KronPCA outer loop did not converge: relative change {outer_change:.3e}");
    Ok(CoreFit { sigma: sigma_hat, iterations: total, converged: false, change: outer_change, factors })
}

fn finish(dims: SpaceTimeDims, core: CoreFit, rho: ShrinkageIntensity) -> Result<RobustFit> {
    Ok(RobustFit {
        sigma: DenseCovariance::symmetrized(dims, &core.sigma)?,
        rho,
        iterations: core.iterations,
        converged: core.converged,
        final_change: core.change,
        kron_factors: core.factors,
    })
}

/// Shrunk Tyler iterations `Σ ← (1 − ρ)·(N/tr A)·A + ρI` with `A` the Tyler
/// update of `Σ`, started from the identity.
pub fn chen_tyler(samples: &SampleSet, rho: ShrinkageIntensity, cfg: &EstimatorConfig) -> Result<RobustFit> {
    cfg.validate()?;
    check_rho(rho.rho)?;
    let s = normalize_samples(samples)?;
    finish(samples.dims, chen_core(&s, rho.rho, cfg)?, rho)
}

/// Robust Kronecker shrinkage: Chen-Tyler initialization, then alternating
/// between the Toeplitz temporal factor of the current Tyler update and
/// Tyler iterations projected onto `T̂ ⊗ S` with shrinkage.
pub fn robust_kronpca(samples: &SampleSet, rho: ShrinkageIntensity, cfg: &EstimatorConfig) -> Result<RobustFit> {
    cfg.validate()?;
    check_rho(rho.rho)?;
    let s = normalize_samples(samples)?;
    finish(samples.dims, robust_core(&s, samples.dims, rho.rho, cfg)?, rho)
}

/// Which robust estimator a shrinkage intensity is selected for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustKind {
    ChenTyler,
    KronTyler,
}

/// Number of folds for cross-validated shrinkage.
pub const CV_FOLDS: usize = 5;

/// Held-out angular Gaussian log-likelihood maximization over [`CV_RHO_GRID`].
pub fn select_rho_cv(samples: &SampleSet, kind: RobustKind, cfg: &EstimatorConfig) -> Result<ShrinkageIntensity> {
    let s = normalize_samples(samples)?;
    let (dim, n) = s.shape();
    let folds = CV_FOLDS.min(n);
    if folds < 2 {
        return Err(KronError::InsufficientData { required: 2, actual: n });
    }
    let mut best = (f64::NEG_INFINITY, CV_RHO_GRID[0]);
    for &rho in &CV_RHO_GRID {
        let mut score = 0.0;
        for f in 0..folds {
            let train: Vec<_> = (0..n).filter(|i| i % folds != f).map(|i| s.column(i)).collect();
            let test: Vec<_> = (0..n).filter(|i| i % folds == f).map(|i| s.column(i)).collect();
            let train = DMatrix::from_columns(&train);
            let test = DMatrix::from_columns(&test);
            let fit = match kind {
                RobustKind::ChenTyler => chen_core(&train, rho, cfg)?,
                RobustKind::KronTyler => robust_core(&train, samples.dims, rho, cfg)?,
            };
            let chol = linalg::cholesky(&fit.sigma)?;
            let log_det = linalg::log_det(&chol);
            score += linalg::quad_forms(&chol, &test)
                .iter()
                .map(|q| -0.5 * log_det - 0.5 * dim as f64 * q.ln())
                .sum::<f64>();
        }
        if score > best.0 {
            best = (score, rho);
        }
    }
    Ok(ShrinkageIntensity::new(best.1, IntensityMethod::Cv))
}

/// Plug-in shape for the closed-form intensity: the trace-normalized sample
/// covariance of the normalized samples for Chen-Tyler, and the
/// DC-KronPCA-LW estimate on the normalized samples for robust KronPCA.
pub fn plugin_shape(samples: &SampleSet, kind: RobustKind, cfg: &EstimatorConfig) -> Result<DenseCovariance> {
    let s = normalize_samples(samples)?;
    let normalized = SampleSet::new(samples.dims, s, samples.seed)?;
    match kind {
        RobustKind::ChenTyler => {
            let n = normalized.n() as f64;
            let m = &normalized.data * normalized.data.transpose() * (samples.dims.dim() as f64 / n);
            DenseCovariance::symmetrized(samples.dims, &m)
        }
        RobustKind::KronTyler => {
            let dc_cfg = EstimatorConfig { diag_correct: true, rho: RhoSetting::Mode(RhoMode::Auto), ..cfg.clone() };
            Ok(super::dc_kronpca_lw(&normalized, &dc_cfg)?.sigma)
        }
    }
}

/// Resolves `cfg.rho` for a robust estimator.
pub fn robust_intensity(samples: &SampleSet, kind: RobustKind, cfg: &EstimatorConfig) -> Result<ShrinkageIntensity> {
    match cfg.rho {
        RhoSetting::Fixed(r) => Ok(ShrinkageIntensity::explicit(r)),
        RhoSetting::Mode(RhoMode::Cv) => select_rho_cv(samples, kind, cfg),
        RhoSetting::Mode(RhoMode::Auto) => {
            let plugin = plugin_shape(samples, kind, cfg)?;
            let rho = elliptical_intensity(samples.n(), &plugin);
            // Tyler iterations need strictly positive shrinkage.
            Ok(ShrinkageIntensity::new(rho.rho.max(1e-3), rho.method))
        }
    }
}
