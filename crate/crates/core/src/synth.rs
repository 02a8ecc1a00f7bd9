//! Synthetic ground truths, samplers and labeled anomaly streams.
//!
//! All randomness goes through [`crate::rng`]: Gaussian coordinates come from
//! the `Normals` stream of the seed, chi-squared mixing variables from the
//! `ChiSquared` stream, and anomaly episodes from the `Anomalies` stream.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution};

use crate::anomaly::FrameSeries;
use crate::error::{KronError, Result};
use crate::kron_ops::{DenseCovariance, SpaceTimeDims};
use crate::linalg;
use crate::rng::{chacha, uniform, NormalStream, Stream};

/// `n` samples of dimension `pT`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dims: SpaceTimeDims,
    /// `pT × n`, one column per sample.
    pub data: DMatrix<f64>,
    /// Seed the samples were drawn with, if synthetic.
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(dims: SpaceTimeDims, data: DMatrix<f64>, seed: Option<u64>) -> Result<Self> {
        if data.nrows() != dims.dim() {
            return Err(KronError::DimensionMismatch {
                expected: format!("sample length {}", dims.dim()),
                actual: format!("sample length {}", data.nrows()),
            });
        }
        Ok(Self { dims, data, seed })
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.data.column(i).into_owned()
    }

    /// Subset of samples by index, keeping order.
    pub fn select(&self, idx: &[usize]) -> SampleSet {
        let cols: Vec<_> = idx.iter().map(|&i| self.data.column(i)).collect();
        SampleSet {
            dims: self.dims,
            data: DMatrix::from_columns(&cols),
            seed: self.seed,
        }
    }
}

/// A covariance verified positive definite on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sigma: DenseCovariance,
    pub description: String,
}

impl GroundTruth {
    pub fn new(sigma: DenseCovariance, description: impl Into<String>) -> Result<Self> {
        let (lo, _) = linalg::min_max_eigenvalue(sigma.matrix());
        if lo <= 0.0 {
            return Err(KronError::NotPositiveDefinite(format!("minimum eigenvalue {lo:.3e}")));
        }
        Ok(Self {
            sigma,
            description: description.into(),
        })
    }
}

/// `coeff^{|i−j|}`.
pub fn ar1_cov(dim: usize, coeff: f64) -> Result<DMatrix<f64>> {
    if !(coeff.abs() < 1.0) {
        return Err(KronError::InvalidParameter(format!("AR coefficient {coeff} outside (-1, 1)")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| coeff.powi(i.abs_diff(j) as i32)))
}

/// `ar1_cov(T, tcoeff) ⊗ ar1_cov(p, scoeff)`.
pub fn paper_truth(p: usize, t: usize, tcoeff: f64, scoeff: f64) -> Result<GroundTruth> {
    let dims = SpaceTimeDims::new(p, t)?;
    let sigma = linalg::kron(&ar1_cov(t, tcoeff)?, &ar1_cov(p, scoeff)?);
    GroundTruth::new(
        DenseCovariance::new(dims, sigma)?,
        format!("AR(1) temporal {tcoeff} x AR(1) spatial {scoeff}, p={p}, T={t}"),
    )
}

fn sqrt_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = nalgebra::Cholesky::new(sigma.clone()) {
        return Ok(ch.l());
    }
    let eig = nalgebra::SymmetricEigen::new(sigma.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(KronError::NotPositiveDefinite("covariance is indefinite".into()));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

fn gaussian_columns(factor: &DMatrix<f64>, n: usize, normals: &mut NormalStream) -> DMatrix<f64> {
    let dim = factor.nrows();
    let mut z = DMatrix::zeros(dim, n);
    // Fill sample by sample so prefixes of a seed's stream are shared across n.
    for c in 0..n {
        for r in 0..dim {
            z[(r, c)] = normals.draw();
        }
    }
    factor * z
}

/// `n` zero-mean Gaussian samples `L z` with `L Lᵀ = Σ`.
pub fn sample_gaussian(truth: &GroundTruth, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(KronError::InsufficientData { required: 1, actual: 0 });
    }
    let factor = sqrt_factor(truth.sigma.matrix())?;
    let mut normals = NormalStream::new(chacha(seed, Stream::Normals));
    let data = gaussian_columns(&factor, n, &mut normals);
    SampleSet::new(truth.sigma.dims(), data, Some(seed))
}

/// Integer degrees of freedom up to this bound draw chi-squared variables as
/// sums of squared normals; larger or fractional values use a gamma sampler.
pub const CHI2_SUM_OF_SQUARES_MAX_DOF: f64 = 64.0;

/// `n` draws of `√(dof / w)` with `w ~ χ²(dof)`.
pub fn student_t_scales(dof: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(dof > 0.0) {
        return Err(KronError::InvalidParameter(format!("dof must be positive, got {dof}")));
    }
    let rng = chacha(seed, Stream::ChiSquared);
    let mut out = Vec::with_capacity(n);
    if dof.fract() == 0.0 && dof <= CHI2_SUM_OF_SQUARES_MAX_DOF {
        let k = dof as usize;
        let mut normals = NormalStream::new(rng);
        for _ in 0..n {
            let w: f64 = (0..k).map(|_| normals.draw().powi(2)).sum();
            out.push((dof / w).sqrt());
        }
    } else {
        let mut rng = rng;
        let chi = ChiSquared::new(dof).map_err(|e| KronError::InvalidParameter(e.to_string()))?;
        for _ in 0..n {
            let w: f64 = chi.sample(&mut rng);
            out.push((dof / w).sqrt());
        }
    }
    Ok(out)
}

/// Multivariate-t samples: the Gaussian draw of the same seed with sample `i`
/// multiplied by `√(dof / w_i)`.
pub fn sample_student_t(truth: &GroundTruth, dof: f64, n: usize, seed: u64) -> Result<SampleSet> {
    let scales = student_t_scales(dof, n, seed)?;
    let mut set = sample_gaussian(truth, n, seed)?;
    for (mut col, s) in set.data.column_iter_mut().zip(scales) {
        col *= s;
    }
    Ok(set)
}

/// Stationary vector AR(1) stream whose length-`T` windows have covariance
/// `ar1_cov(T, tcoeff) ⊗ spatial`.
pub fn ar_frame_series(spatial: &DMatrix<f64>, tcoeff: f64, n_frames: usize, seed: u64) -> Result<FrameSeries> {
    if !(tcoeff.abs() < 1.0) {
        return Err(KronError::InvalidParameter(format!("AR coefficient {tcoeff} outside (-1, 1)")));
    }
    let p = spatial.nrows();
    let factor = sqrt_factor(spatial)?;
    let mut normals = NormalStream::new(chacha(seed, Stream::Normals));
    let innov = (1.0 - tcoeff * tcoeff).sqrt();
    let mut frames = DMatrix::zeros(p, n_frames);
    let mut prev: Option<DVector<f64>> = None;
    for f in 0..n_frames {
        let z = DVector::from_fn(p, |_, _| normals.draw());
        let shock = &factor * z;
        let x = match &prev {
            None => shock,
            Some(x0) => x0 * tcoeff + shock * innov,
        };
        frames.set_column(f, &x);
        prev = Some(x);
    }
    FrameSeries::new(frames, Some(vec![0; n_frames]))
}

/// Mean anomaly episode length in frames.
pub const MEAN_EPISODE_LEN: f64 = 5.0;

/// Adds contiguous anomalous episodes to `base`.
///
/// Episode lengths are geometric with mean [`MEAN_EPISODE_LEN`]; episodes start
/// from a nominal frame with probability chosen so the long-run labeled
/// fraction equals `rate`. Each episode shifts a random nonempty subset of
/// coordinates (each chosen with probability 1/2) by `magnitude` times that
/// coordinate's standard deviation in `base`. Frames already labeled in `base`
/// keep their label.
pub fn inject_anomalies(base: &FrameSeries, rate: f64, magnitude: f64, seed: u64) -> Result<FrameSeries> {
    if !(0.0..1.0).contains(&rate) {
        return Err(KronError::InvalidParameter(format!("anomaly rate {rate} outside [0, 1)")));
    }
    let p = base.p();
    let n = base.len();
    let mut out = base.clone();
    let mut labels: Vec<u8> = (0..n).map(|i| base.label(i)).collect();
    if rate == 0.0 || n == 0 {
        out.labels = Some(labels);
        return Ok(out);
    }
    let std: Vec<f64> = (0..p)
        .map(|c| {
            let row = base.frames.row(c);
            let mean = row.mean();
            (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
        })
        .collect();
    let start_prob = rate / (MEAN_EPISODE_LEN * (1.0 - rate));
    let end_prob = 1.0 / MEAN_EPISODE_LEN;
    let mut rng = chacha(seed, Stream::Anomalies);
    let mut f = 0;
    while f < n {
        if uniform(&mut rng) >= start_prob {
            f += 1;
            continue;
        }
        let mut subset: Vec<usize> = (0..p).filter(|_| uniform(&mut rng) < 0.5).collect();
        if subset.is_empty() {
            subset.push((uniform(&mut rng) * p as f64) as usize % p);
        }
        loop {
            for &c in &subset {
                out.frames[(c, f)] += magnitude * std[c];
            }
            labels[f] = 1;
            f += 1;
            if f >= n || uniform(&mut rng) < end_prob {
                break;
            }
        }
    }
    out.labels = Some(labels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::scm;
    use crate::kron_ops::rearrange;

    #[test]
    fn ar1_examples() {
        let a = ar1_cov(3, 0.5).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]));
        assert_eq!(ar1_cov(4, 0.0).unwrap(), DMatrix::identity(4, 4));
        let (lo, _) = linalg::min_max_eigenvalue(&ar1_cov(10, 0.95).unwrap());
        assert!(lo > 0.0);
        assert!(ar1_cov(3, 1.0).is_err());
        assert!(ar1_cov(3, -1.5).is_err());
    }

    #[test]
    fn truth_examples() {
        let t = paper_truth(1, 1, 0.5, 0.95).unwrap();
        assert_eq!(*t.sigma.matrix(), DMatrix::from_element(1, 1, 1.0));
        let t = paper_truth(2, 2, 0.5, 0.95).unwrap();
        // frame 0 coord 0 against frame 1 coord 1
        assert!((t.sigma.matrix()[(0, 3)] - 0.475).abs() < 1e-15);
        let r = rearrange(&paper_truth(4, 3, 0.5, 0.95).unwrap().sigma);
        let sv = linalg::SortedSvd::new(&r.entries).singular_values;
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn gaussian_is_deterministic_and_consistent() {
        let truth = GroundTruth::new(DenseCovariance::identity(SpaceTimeDims::new(2, 2).unwrap()), "I").unwrap();
        let a = sample_gaussian(&truth, 10_000, 42).unwrap();
        let b = sample_gaussian(&truth, 10_000, 42).unwrap();
        assert_eq!(a, b);
        let s = scm(&a).unwrap();
        let err = (s.matrix() - DMatrix::<f64>::identity(4, 4)).norm() / 2.0;
        assert!(err < 0.1, "err {err}");
        let one = sample_gaussian(&truth, 1, 1).unwrap();
        assert_eq!(one.data.shape(), (4, 1));
        assert!(sample_gaussian(&truth, 0, 1).is_err());
    }

    #[test]
    fn student_t_scale_concentrates_for_large_dof() {
        let s = student_t_scales(1e6, 2000, 8).unwrap();
        let inside = s.iter().filter(|&&x| (0.99..=1.01).contains(&x)).count();
        assert!(inside as f64 >= 0.99 * s.len() as f64);
        assert!(student_t_scales(0.0, 1, 1).is_err());
    }

    #[test]
    fn student_t_shares_gaussian_direction() {
        let truth = paper_truth(3, 2, 0.5, 0.9).unwrap();
        let g = sample_gaussian(&truth, 20, 5).unwrap();
        let t = sample_student_t(&truth, 3.0, 20, 5).unwrap();
        assert_eq!(t, sample_student_t(&truth, 3.0, 20, 5).unwrap());
        for i in 0..20 {
            let (gi, ti) = (g.sample(i), t.sample(i));
            let c = ti.dot(&gi) / (ti.norm() * gi.norm());
            assert!((c - 1.0).abs() < 1e-12);
        }
        let big = sample_student_t(&truth, 1e8, 20, 5).unwrap();
        assert!((big.data - g.data).amax() < 1e-2);
    }

    #[test]
    fn injection_rates() {
        let spatial = ar1_cov(3, 0.5).unwrap();
        let base = ar_frame_series(&spatial, 0.5, 10_000, 1).unwrap();
        let none = inject_anomalies(&base, 0.0, 5.0, 2).unwrap();
        assert_eq!(none.frames, base.frames);
        assert!(none.labels.as_ref().unwrap().iter().all(|&l| l == 0));

        let zero = inject_anomalies(&base, 0.1, 0.0, 2).unwrap();
        assert_eq!(zero.frames, base.frames);

        let hit = inject_anomalies(&base, 0.1, 5.0, 2).unwrap();
        let frac = hit.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
        assert!((0.05..=0.15).contains(&frac), "fraction {frac}");
        for f in 0..10_000 {
            let moved = (hit.frames.column(f) - base.frames.column(f)).amax() > 0.0;
            assert_eq!(moved, hit.label(f) == 1);
        }
        assert!(inject_anomalies(&base, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn ar_stream_window_covariance() {
        let spatial = ar1_cov(2, 0.6).unwrap();
        let s = ar_frame_series(&spatial, 0.5, 40_000, 3).unwrap();
        let w = crate::anomaly::make_windows(&s, 3, 1).unwrap();
        let set = SampleSet::new(SpaceTimeDims::new(2, 3).unwrap(), w.matrix(), None).unwrap();
        let est = scm(&set).unwrap();
        let truth = linalg::kron(&ar1_cov(3, 0.5).unwrap(), &spatial);
        let err = (est.matrix() - &truth).norm() / truth.norm();
        assert!(err < 0.05, "err {err}");
    }
}
