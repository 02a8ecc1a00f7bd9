//! KronPCA and its diagonally corrected, block Toeplitz variants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::config::EstimatorConfig;
use super::svt::{soft_impute, svt_factors, Thresholded};
use crate::error::{KronError, Result};
use crate::kron_ops::{
    derearrange_matrix, diag_mask, embed_rows, kron_assemble, project_rows, rearrange, DenseCovariance,
    SpaceTimeDims,
};
use crate::linalg;

/// One `weight · temporal ⊗ spatial` term with unit-Frobenius factors.
#[derive(Debug, Clone, PartialEq)]
pub struct KronFactor {
    pub weight: f64,
    /// `T × T`.
    pub temporal: DMatrix<f64>,
    /// `p × p`.
    pub spatial: DMatrix<f64>,
}

/// Fitted `Σ_i w_i T_i ⊗ S_i + I ⊗ diag(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KronModel {
    pub dims: SpaceTimeDims,
    /// Nonincreasing weight order.
    pub factors: Vec<KronFactor>,
    pub u: DVector<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub config: EstimatorConfig,
}

impl KronModel {
    pub fn factor_pairs(&self) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        self.factors
            .iter()
            .map(|f| (&f.temporal * f.weight, f.spatial.clone()))
            .collect()
    }

    /// The Kronecker sum without the diagonal correction.
    pub fn low_rank(&self) -> DenseCovariance {
        kron_assemble(self.dims, &self.factor_pairs(), &DVector::zeros(self.dims.p)).expect("consistent factor shapes")
    }

    pub fn covariance(&self) -> DenseCovariance {
        kron_assemble(self.dims, &self.factor_pairs(), &self.u).expect("consistent factor shapes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(KronModelJson::from(self)).expect("serializable model")
    }
}

/// Serialized form: factor entries are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KronModelJson {
    pub dims: SpaceTimeDims,
    pub factors: Vec<KronFactorJson>,
    pub u: Vec<f64>,
    pub config: EstimatorConfig,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KronFactorJson {
    pub weight: f64,
    pub temporal: Vec<f64>,
    pub spatial: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<&KronModel> for KronModelJson {
    fn from(m: &KronModel) -> Self {
        Self {
            dims: m.dims,
            factors: m
                .factors
                .iter()
                .map(|f| KronFactorJson {
                    weight: f.weight,
                    temporal: row_major(&f.temporal),
                    spatial: row_major(&f.spatial),
                })
                .collect(),
            u: m.u.as_slice().to_vec(),
            config: m.config.clone(),
            objective_trace: m.objective_trace.clone(),
            iterations: m.iterations,
            converged: m.converged,
        }
    }
}

impl TryFrom<KronModelJson> for KronModel {
    type Error = KronError;

    fn try_from(j: KronModelJson) -> Result<Self> {
        let SpaceTimeDims { p, t } = j.dims;
        if j.u.len() != p || j.factors.iter().any(|f| f.temporal.len() != t * t || f.spatial.len() != p * p) {
            return Err(KronError::DimensionMismatch {
                expected: format!("factors for p={p}, T={t}"),
                actual: "inconsistent factor lengths".into(),
            });
        }
        Ok(Self {
            dims: j.dims,
            factors: j
                .factors
                .into_iter()
                .map(|f| KronFactor {
                    weight: f.weight,
                    temporal: DMatrix::from_row_slice(t, t, &f.temporal),
                    spatial: DMatrix::from_row_slice(p, p, &f.spatial),
                })
                .collect(),
            u: DVector::from_vec(j.u),
            objective_trace: j.objective_trace,
            iterations: j.iterations,
            converged: j.converged,
            config: j.config,
        })
    }
}

/// Maps thresholded singular triplets (in compressed space when `toeplitz`)
/// back to Kronecker factors.
fn factors_from(dims: SpaceTimeDims, th: &Thresholded, toeplitz: bool) -> Vec<KronFactor> {
    let SpaceTimeDims { p, t } = dims;
    let lead = th.weights.first().copied().unwrap_or(0.0);
    th.weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 1e-14 * lead)
        .map(|(k, &w)| {
            let left = th.svd.u.column(k).into_owned();
            let left = if toeplitz {
                embed_rows(dims, &DMatrix::from_column_slice(left.len(), 1, left.as_slice()))
                    .column(0)
                    .into_owned()
            } else {
                left
            };
            let mut temporal = linalg::unvec(left.as_slice(), t, t);
            let mut spatial = linalg::unvec(th.svd.v.column(k).as_slice(), p, p);
            if temporal.trace() < 0.0 {
                temporal.neg_mut();
                spatial.neg_mut();
            }
            KronFactor {
                weight: w,
                temporal,
                spatial,
            }
        })
        .collect()
}

/// Rearranged target: `R(Σ)`, or its Toeplitz compression `P(R(Σ))`.
fn target(scm: &DenseCovariance, toeplitz: bool) -> DMatrix<f64> {
    let r = rearrange(scm).entries;
    if toeplitz {
        project_rows(scm.dims(), &r)
    } else {
        r
    }
}

/// Truncated, thresholded SVD fit of the rearranged covariance (no diagonal correction).
pub fn kronpca(scm: &DenseCovariance, cfg: &EstimatorConfig) -> Result<KronModel> {
    cfg.validate()?;
    if cfg.diag_correct {
        return Err(KronError::InvalidParameter(
            "kronpca fits without diagonal correction; use dc_kronpca".into(),
        ));
    }
    let dims = scm.dims();
    let b = target(scm, cfg.toeplitz);
    let th = svt_factors(&b, cfg.beta / 2.0, Some(cfg.r));
    let fit = th.matrix();
    let objective = (&b - fit).norm_squared() + cfg.beta * th.nuclear_norm();
    Ok(KronModel {
        dims,
        factors: factors_from(dims, &th, cfg.toeplitz),
        u: DVector::zeros(dims.p),
        objective_trace: vec![objective],
        iterations: 1,
        converged: true,
        config: cfg.clone(),
    })
}

/// Diagonally corrected KronPCA: the low-rank term is fitted to every rearranged
/// entry except those landing on the covariance diagonal, and the diagonal
/// residual is absorbed by `I ⊗ diag(u)`.
pub fn dc_kronpca(scm: &DenseCovariance, cfg: &EstimatorConfig) -> Result<KronModel> {
    cfg.validate()?;
    if !cfg.diag_correct {
        return Err(KronError::InvalidParameter(
            "dc_kronpca requires diag_correct = true; use kronpca".into(),
        ));
    }
    let dims = scm.dims();
    let mask = diag_mask(dims);
    let b = target(scm, cfg.toeplitz);
    let m = if cfg.toeplitz { &mask.compressed } else { &mask.full };
    let fit = soft_impute(&b, m, cfg.beta, cfg)?;
    let th = svt_factors(&fit.z, 0.0, Some(cfg.r));
    let factors = factors_from(dims, &th, cfg.toeplitz);
    let low = if cfg.toeplitz {
        embed_rows(dims, &fit.z)
    } else {
        fit.z.clone()
    };
    let low = derearrange_matrix(dims, &low);
    let u = set_diag_correction(scm, &low)?;
    Ok(KronModel {
        dims,
        factors,
        u,
        objective_trace: fit.objective_trace,
        iterations: fit.iterations,
        converged: fit.converged,
        config: cfg.clone(),
    })
}

/// Dispatches on `cfg.diag_correct`.
pub fn fit_kron_model(scm: &DenseCovariance, cfg: &EstimatorConfig) -> Result<KronModel> {
    if cfg.diag_correct {
        dc_kronpca(scm, cfg)
    } else {
        kronpca(scm, cfg)
    }
}

/// Time-averaged diagonal residual `max(0, T⁻¹ Σ_t [Σ − L]_{(t,m),(t,m)})`.
pub fn set_diag_correction(scm: &DenseCovariance, low_rank: &DMatrix<f64>) -> Result<DVector<f64>> {
    let SpaceTimeDims { p, t } = scm.dims();
    if low_rank.shape() != scm.matrix().shape() {
        return Err(crate::error::shape_err(scm.matrix().shape(), low_rank.shape()));
    }
    let s = scm.matrix();
    Ok(DVector::from_fn(p, |m, _| {
        let avg = (0..t)
            .map(|f| {
                let i = f * p + m;
                s[(i, i)] - low_rank[(i, i)]
            })
            .sum::<f64>()
            / t as f64;
        avg.max(0.0)
    }))
}

/// Eigenvalue floor, relative to the largest eigenvalue, for extracted temporal factors.
pub const TEMPORAL_EIGEN_FLOOR: f64 = 1e-8;

/// Replaces each diagonal of a square matrix by its mean.
pub fn toeplitz_average(a: &DMatrix<f64>) -> DMatrix<f64> {
    let t = a.nrows();
    let mut profile = vec![0.0; 2 * t - 1];
    for i in 0..t {
        for j in 0..t {
            profile[j + t - 1 - i] += a[(i, j)];
        }
    }
    for (idx, v) in profile.iter_mut().enumerate() {
        let off = (idx as isize - (t as isize - 1)).unsigned_abs();
        *v /= (t - off) as f64;
    }
    DMatrix::from_fn(t, t, |i, j| profile[j + t - 1 - i])
}

/// Toeplitz temporal factor of the rank-one block Toeplitz KronPCA fit of
/// `sigma`, repaired to be positive definite and scaled to trace `T`.
///
/// Repair: eigenvalues are clipped below at `ε·λ_max`, the diagonals are
/// re-averaged, and if averaging pushed the smallest eigenvalue under the
/// floor again the diagonal is lifted by the shortfall (a Toeplitz shift).
pub fn kronpca_temporal(sigma: &DenseCovariance) -> Result<DMatrix<f64>> {
    let t = sigma.dims().t;
    let cfg = EstimatorConfig {
        r: 1,
        beta: 0.0,
        toeplitz: true,
        diag_correct: false,
        ..Default::default()
    };
    let model = kronpca(sigma, &cfg)?;
    let factor = model
        .factors
        .first()
        .ok_or_else(|| KronError::Numerical("temporal factor of a zero matrix".into()))?;
    let temporal = linalg::symmetrize(&factor.temporal);
    let eig = SymmetricEigen::new(temporal);
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return Err(KronError::NotPositiveDefinite(
            "temporal factor has no positive eigenvalue".into(),
        ));
    }
    let floor = TEMPORAL_EIGEN_FLOOR * top;
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut out = toeplitz_average(&linalg::symmetrize(&repaired));
    let (lo, hi) = linalg::min_max_eigenvalue(&out);
    let want = TEMPORAL_EIGEN_FLOOR * hi;
    if lo < want {
        for i in 0..t {
            out[(i, i)] += want - lo;
        }
    }
    let scale = t as f64 / out.trace();
    Ok(out * scale)
}

/// Normalized Kronecker and PCA spectra.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KronSpectrum {
    /// Singular values of the (compressed) rearranged covariance, unit 2-norm.
    pub kron_sv: Vec<f64>,
    /// Eigenvalues of the covariance, unit 2-norm, nonincreasing.
    pub pca_ev: Vec<f64>,
}

fn normalize(values: Vec<f64>) -> Vec<f64> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return values;
    }
    values.into_iter().map(|v| v / norm).collect()
}

pub fn kron_spectrum(scm: &DenseCovariance, toeplitz: bool) -> KronSpectrum {
    let b = target(scm, toeplitz);
    let kron_sv = linalg::SortedSvd::new(&b).singular_values;
    let mut ev = linalg::sym_eigenvalues(scm.matrix());
    ev.reverse();
    KronSpectrum {
        kron_sv: normalize(kron_sv),
        pca_ev: normalize(ev),
    }
}

/// Smallest count of leading components whose squared values reach `fraction`
/// of the total.
pub fn energy_count(values: &[f64], fraction: f64) -> usize {
    let total: f64 = values.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        acc += v * v;
        if acc >= fraction * total * (1.0 - 1e-12) {
            return k + 1;
        }
    }
    values.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron_ops::is_toeplitz;
    use crate::synth::ar1_cov;
    use rand::{Rng, SeedableRng};

    fn rand_spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &g * g.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn cov(d: SpaceTimeDims, m: DMatrix<f64>) -> DenseCovariance {
        DenseCovariance::symmetrized(d, &m).unwrap()
    }

    #[test]
    fn kronpca_recovers_kron_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = SpaceTimeDims::new(3, 4).unwrap();
        let a = rand_spd(4, &mut rng);
        let b = rand_spd(3, &mut rng);
        let s = cov(d, linalg::kron(&a, &b));
        let cfg = EstimatorConfig { toeplitz: false, ..Default::default() };
        let m = kronpca(&s, &cfg).unwrap();
        assert_eq!(m.factors.len(), 1);
        assert!((m.covariance().matrix() - s.matrix()).norm() < 1e-10 * s.matrix().norm());
        assert!((m.factors[0].temporal.norm() - 1.0).abs() < 1e-12);
        assert!(m.factors[0].temporal.trace() >= 0.0);
    }

    #[test]
    fn toeplitz_kronpca_keeps_toeplitz_factor() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = SpaceTimeDims::new(3, 5).unwrap();
        let a = ar1_cov(5, 0.6).unwrap();
        let b = rand_spd(3, &mut rng);
        let s = cov(d, linalg::kron(&a, &b));
        let m = kronpca(&s, &EstimatorConfig::default()).unwrap();
        assert!(is_toeplitz(&m.factors[0].temporal, 1e-12));
        assert!((m.covariance().matrix() - s.matrix()).norm() < 1e-10 * s.matrix().norm());
    }

    #[test]
    fn large_beta_thresholds_everything() {
        let d = SpaceTimeDims::new(2, 3).unwrap();
        let s = DenseCovariance::identity(d);
        let top = linalg::SortedSvd::new(&rearrange(&s).entries).singular_values[0];
        let cfg = EstimatorConfig { beta: 2.0 * top + 1e-9, toeplitz: false, ..Default::default() };
        let m = kronpca(&s, &cfg).unwrap();
        assert!(m.factors.is_empty());
        assert_eq!(m.covariance().matrix().amax(), 0.0);
    }

    #[test]
    fn flag_preconditions() {
        let s = DenseCovariance::identity(SpaceTimeDims::new(2, 2).unwrap());
        assert!(kronpca(&s, &EstimatorConfig { diag_correct: true, ..Default::default() }).is_err());
        assert!(dc_kronpca(&s, &EstimatorConfig::default()).is_err());
    }

    #[test]
    fn dc_recovers_planted_diagonal_correction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = SpaceTimeDims::new(4, 4).unwrap();
        let a = ar1_cov(4, 0.5).unwrap();
        let b = rand_spd(4, &mut rng);
        let dd = DVector::from_fn(4, |_, _| rng.random::<f64>() + 0.1);
        let truth = kron_assemble(d, &[(a, b)], &dd).unwrap();
        let cfg = EstimatorConfig { diag_correct: true, beta: 1e-6, tol: 1e-12, max_iter: 20_000, ..Default::default() };
        let m = dc_kronpca(&truth, &cfg).unwrap();
        assert!(m.converged);
        let err = (m.covariance().matrix() - truth.matrix()).norm() / truth.matrix().norm();
        assert!(err < 1e-6, "err {err}");
        assert!((&m.u - &dd).amax() < 1e-5);
    }

    #[test]
    fn dc_full_rank_unconstrained_completion() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = SpaceTimeDims::new(2, 2).unwrap();
        let s = cov(d, rand_spd(4, &mut rng));
        let cfg = EstimatorConfig { diag_correct: true, toeplitz: false, r: 4, beta: 0.0, ..Default::default() };
        let m = dc_kronpca(&s, &cfg).unwrap();
        let low = m.low_rank();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!((low.matrix()[(i, j)] - s.matrix()[(i, j)]).abs() < 1e-12);
                }
            }
        }
        // u absorbs the nonnegative time-averaged diagonal residual
        let resid = s.matrix() - low.matrix();
        for c in 0..2 {
            let want = ((resid[(c, c)] + resid[(2 + c, 2 + c)]) / 2.0).max(0.0);
            assert!((m.u[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_scalar_case_lives_in_u() {
        let d = SpaceTimeDims::new(1, 1).unwrap();
        let s = DenseCovariance::new(d, DMatrix::from_element(1, 1, 2.5)).unwrap();
        let m = dc_kronpca(&s, &EstimatorConfig { diag_correct: true, ..Default::default() }).unwrap();
        assert!(m.factors.is_empty());
        assert_eq!(m.u[0], 2.5);
    }

    #[test]
    fn diag_correction_cases() {
        let d = SpaceTimeDims::new(3, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let low = rand_spd(6, &mut rng);
        let s = cov(d, low.clone());
        assert_eq!(set_diag_correction(&s, &low).unwrap(), DVector::zeros(3));
        let extra = DVector::from_vec(vec![0.5, 0.0, 2.0]);
        let plus = kron_assemble(d, &[], &extra).unwrap();
        let s2 = cov(d, &low + plus.matrix());
        assert!((set_diag_correction(&s2, &low).unwrap() - &extra).amax() < 1e-14);
        let s3 = cov(d, &low - DMatrix::identity(6, 6));
        assert_eq!(set_diag_correction(&s3, &low).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn dc_fit_error_nonincreasing_in_rank() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let d = SpaceTimeDims::new(3, 3).unwrap();
        let s = cov(d, rand_spd(9, &mut rng));
        let mask = diag_mask(d);
        let mut last = f64::INFINITY;
        for r in 1..=5 {
            let cfg = EstimatorConfig { diag_correct: true, r, tol: 1e-12, max_iter: 5000, ..Default::default() };
            let m = dc_kronpca(&s, &cfg).unwrap();
            let resid = project_rows(d, &rearrange(&s).entries) - project_rows(d, &rearrange(&m.low_rank()).entries);
            let err = resid.component_mul(&mask.compressed).norm_squared();
            assert!(err <= last + 1e-9, "rank {r}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn temporal_factor_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = SpaceTimeDims::new(3, 4).unwrap();
        let a = ar1_cov(4, 0.7).unwrap() * 2.0;
        let s = cov(d, linalg::kron(&a, &rand_spd(3, &mut rng)));
        let t = kronpca_temporal(&s).unwrap();
        assert!((t - &a * (4.0 / a.trace())).amax() < 1e-10);

        let id = kronpca_temporal(&DenseCovariance::identity(d)).unwrap();
        assert!((id - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);

        for _ in 0..20 {
            let g = DMatrix::from_fn(12, 12, |_, _| rng.random::<f64>() - 0.5);
            let s = cov(d, &g + g.transpose());
            if let Ok(t) = kronpca_temporal(&s) {
                assert!(is_toeplitz(&t, 1e-12));
                assert!((t.trace() - 4.0).abs() < 1e-12);
                assert!(linalg::min_max_eigenvalue(&t).0 >= 0.0);
            }
        }
        assert!(kronpca_temporal(&cov(d, DMatrix::zeros(12, 12))).is_err());
    }

    #[test]
    fn spectrum_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = SpaceTimeDims::new(3, 3).unwrap();
        let s = cov(d, linalg::kron(&ar1_cov(3, 0.5).unwrap(), &rand_spd(3, &mut rng)));
        for toeplitz in [true, false] {
            let sp = kron_spectrum(&s, toeplitz);
            assert!((sp.kron_sv[0] - 1.0).abs() < 1e-12);
            assert!(sp.kron_sv[1..].iter().all(|v| v.abs() < 1e-12));
            assert_eq!(energy_count(&sp.kron_sv, 0.95), 1);
            for list in [&sp.kron_sv, &sp.pca_ev] {
                assert!((list.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(list.windows(2).all(|w| w[0] >= w[1]));
            }
        }
        let sp = kron_spectrum(&DenseCovariance::identity(d), true);
        assert_eq!(energy_count(&sp.kron_sv, 0.95), 1);
        assert!(sp.pca_ev.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn model_json_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = SpaceTimeDims::new(2, 3).unwrap();
        let s = cov(d, rand_spd(6, &mut rng));
        let m = dc_kronpca(&s, &EstimatorConfig { diag_correct: true, r: 2, ..Default::default() }).unwrap();
        let j: KronModelJson = serde_json::from_value(m.to_json()).unwrap();
        assert_eq!(KronModel::try_from(j).unwrap(), m);
    }
}
