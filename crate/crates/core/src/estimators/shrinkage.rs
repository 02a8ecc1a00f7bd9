//! Sample covariance, identity-target shrinkage and plug-in intensities.

use nalgebra::DMatrix;

use super::config::{IntensityMethod, ShrinkageIntensity};
use crate::error::{KronError, Result};
use crate::kron_ops::DenseCovariance;
use crate::linalg;
use crate::synth::SampleSet;

/// Samples with their sample mean removed.
pub fn centered(samples: &SampleSet) -> DMatrix<f64> {
    let mean = samples.data.column_mean();
    let mut x = samples.data.clone();
    for mut c in x.column_iter_mut() {
        c -= &mean;
    }
    x
}

/// `n⁻¹ Σ (x_i − x̄)(x_i − x̄)ᵀ`. A single sample yields the zero matrix.
pub fn scm(samples: &SampleSet) -> Result<DenseCovariance> {
    let n = samples.n();
    if n == 0 {
        return Err(KronError::InsufficientData { required: 1, actual: 0 });
    }
    if n == 1 {
        log::warn!("sample covariance of a single sample is the zero matrix");
    }
    let x = centered(samples);
    let s = (&x * x.transpose()) / n as f64;
    DenseCovariance::symmetrized(samples.dims, &s)
}

/// `(1 − ρ)Σ + ρ·(tr Σ / pT)·I`.
pub fn shrink(sigma: &DenseCovariance, rho: ShrinkageIntensity) -> DenseCovariance {
    let dim = sigma.dims().dim();
    let target = sigma.trace() / dim as f64;
    let mut out = sigma.matrix() * (1.0 - rho.rho);
    for i in 0..dim {
        out[(i, i)] += rho.rho * target;
    }
    DenseCovariance::symmetrized(sigma.dims(), &out).expect("shape preserved")
}

/// Ledoit-Wolf intensity with `plugin` standing in for the unknown covariance:
/// `ρ = min(b̄², d²) / d²` where `d² = ‖S − mI‖²/pT` and
/// `b̄² = Σ_i ‖x̃_i x̃_iᵀ − S‖² / (n²·pT)`.
pub fn lw_intensity(samples: &SampleSet, plugin: &DenseCovariance) -> Result<ShrinkageIntensity> {
    let n = samples.n();
    if n < 2 {
        return Err(KronError::InsufficientData { required: 2, actual: n });
    }
    let dim = samples.dims.dim();
    if plugin.dims().dim() != dim {
        return Err(KronError::DimensionMismatch {
            expected: format!("dimension {dim}"),
            actual: format!("dimension {}", plugin.dims().dim()),
        });
    }
    let s = plugin.matrix();
    let m = plugin.trace() / dim as f64;
    let mut dev = s.clone();
    for i in 0..dim {
        dev[(i, i)] -= m;
    }
    let d2 = linalg::frobenius_sq(&dev) / dim as f64;
    if d2 == 0.0 {
        return Ok(ShrinkageIntensity::new(1.0, IntensityMethod::LwPlugin));
    }
    let x = centered(samples);
    let mut bbar = 0.0;
    for c in x.column_iter() {
        let outer = c * c.transpose();
        bbar += linalg::frobenius_sq(&(outer - s));
    }
    let bbar2 = bbar / ((n * n) as f64 * dim as f64);
    Ok(ShrinkageIntensity::new(bbar2.min(d2) / d2, IntensityMethod::LwPlugin))
}

/// Oracle intensity for shrinking Tyler-type shape estimates, evaluated at a
/// plug-in shape `plugin` (rescaled internally to trace `N = pT`):
///
/// `ρ = (N² + (1 − 2/N)·tr R²) / ((N² − nN − 2n) + (n + 1 + 2(n − 1)/N)·tr R²)`.
pub fn elliptical_intensity(n: usize, plugin: &DenseCovariance) -> ShrinkageIntensity {
    let dim = plugin.dims().dim() as f64;
    let r = plugin.matrix() * (dim / plugin.trace());
    let tr_r2 = linalg::frobenius_sq(&r);
    let nf = n as f64;
    let num = dim * dim + (1.0 - 2.0 / dim) * tr_r2;
    let den = (dim * dim - nf * dim - 2.0 * nf) + (nf + 1.0 + 2.0 * (nf - 1.0) / dim) * tr_r2;
    let rho = if den > 0.0 { num / den } else { 1.0 };
    ShrinkageIntensity::new(rho, IntensityMethod::EllipticalPlugin)
}
