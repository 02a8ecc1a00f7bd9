//! Singular value thresholding and soft-impute for nuclear-norm penalized
//! low-rank fitting with missing entries.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use super::config::EstimatorConfig;
use crate::error::{shape_err, Result};
use crate::linalg::SortedSvd;

/// Thresholded singular triplets of a matrix.
pub struct Thresholded {
    pub svd: SortedSvd,
    /// `max(σ_k − τ, 0)` for the retained leading terms; trailing terms are dropped.
    pub weights: Vec<f64>,
}

impl Thresholded {
    pub fn matrix(&self) -> DMatrix<f64> {
        self.svd.reconstruct(&self.weights)
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn svt_factors(m: &DMatrix<f64>, tau: f64, max_rank: Option<usize>) -> Thresholded {
    let svd = SortedSvd::new(m);
    let cap = max_rank.unwrap_or(usize::MAX);
    let weights = svd
        .singular_values
        .iter()
        .take(cap)
        .map(|s| (s - tau).max(0.0))
        .take_while(|&w| w > 0.0)
        .collect();
    Thresholded { svd, weights }
}

/// Soft-thresholds singular values by `tau` and keeps at most `max_rank` of them.
pub fn svt(m: &DMatrix<f64>, tau: f64, max_rank: Option<usize>) -> DMatrix<f64> {
    svt_factors(m, tau, max_rank).matrix()
}

#[derive(Debug, Clone)]
pub struct SoftImpute {
    pub z: DMatrix<f64>,
    /// `‖mask∘(b − Z)‖² + β‖Z‖_*` after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_rel_change: f64,
}

impl SoftImpute {
    /// Whether the objective trace never increased beyond rounding.
    pub fn is_monotone(&self) -> bool {
        objective_is_monotone(&self.objective_trace)
    }
}

pub fn objective_is_monotone(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

static RUNS: AtomicUsize = AtomicUsize::new(0);
static VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// `(runs, runs whose objective trace increased)` over the life of the process.
pub fn monotonicity_stats() -> (usize, usize) {
    (RUNS.load(Ordering::Relaxed), VIOLATIONS.load(Ordering::Relaxed))
}

/// Minimizes `‖mask∘(b − Z)‖_F² + β‖Z‖_*` over matrices of rank at most `cfg.r`
/// by iterating `Z ← svt(mask∘b + (1 − mask)∘Z, β/2, r)` from `Z = 0`.
pub fn soft_impute(b: &DMatrix<f64>, mask: &DMatrix<f64>, beta: f64, cfg: &EstimatorConfig) -> Result<SoftImpute> {
    if b.shape() != mask.shape() {
        return Err(shape_err(b.shape(), mask.shape()));
    }
    let tau = beta / 2.0;
    let rank = Some(cfg.r);
    let observed = b.component_mul(mask);
    let fully_observed = mask.iter().all(|&m| m == 1.0);

    let objective = |z: &DMatrix<f64>, nuclear: f64| -> f64 {
        let resid = (b - z).component_mul(mask);
        resid.norm_squared() + beta * nuclear
    };

    let mut z = DMatrix::zeros(b.nrows(), b.ncols());
    let mut trace = Vec::new();
    let mut rel = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let filled = &observed + (&z - z.component_mul(mask));
        let step = svt_factors(&filled, tau, rank);
        let z_new = step.matrix();
        trace.push(objective(&z_new, step.nuclear_norm()));
        let prev_norm = z.norm();
        rel = if prev_norm > 0.0 {
            (&z_new - &z).norm() / prev_norm
        } else if z_new.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        z = z_new;
        if fully_observed || rel < cfg.tol {
            converged = true;
            break;
        }
    }
    let out = SoftImpute {
        z,
        objective_trace: trace,
        iterations,
        converged,
        final_rel_change: if fully_observed { 0.0 } else { rel },
    };
    RUNS.fetch_add(1, Ordering::Relaxed);
    if !out.is_monotone() {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
        log::error!("soft-impute objective increased: {:?}", out.objective_trace);
    }
    debug_assert!(out.is_monotone(), "soft-impute objective increased");
    if !converged {
        log::warn!(
            "soft-impute stopped after {iterations} iterations, relative change {:.3e}",
            out.final_rel_change
        );
    }
    Ok(out)
}
