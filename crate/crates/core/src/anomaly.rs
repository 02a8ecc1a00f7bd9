//! Sliding-window Mahalanobis anomaly detection and ROC evaluation.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KronError, Result};
use crate::kron_ops::DenseCovariance;
use crate::linalg;

/// A stream of length-`p` frames with optional 0/1 anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    /// `p × n_frames`, one column per frame.
    pub frames: DMatrix<f64>,
    pub timestamps: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl FrameSeries {
    /// Frames indexed `0, 1, …` as timestamps.
    pub fn new(frames: DMatrix<f64>, labels: Option<Vec<u8>>) -> Result<Self> {
        let n = frames.ncols();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(KronError::DimensionMismatch {
                    expected: format!("{n} labels"),
                    actual: format!("{} labels", l.len()),
                });
            }
            if l.iter().any(|&x| x > 1) {
                return Err(KronError::InvalidParameter("labels must be 0 or 1".into()));
            }
        }
        Ok(Self {
            frames,
            timestamps: (0..n).map(|i| i as f64).collect(),
            labels,
        })
    }

    pub fn p(&self) -> usize {
        self.frames.nrows()
    }

    pub fn len(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels.as_ref().map_or(0, |l| l[i])
    }

    /// Frames `range` as a new series with re-based timestamps kept.
    pub fn slice(&self, range: Range<usize>) -> FrameSeries {
        FrameSeries {
            frames: self.frames.columns(range.start, range.len()).into_owned(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }

    /// Appends `other` after `self`.
    pub fn concat(&self, other: &FrameSeries) -> Result<FrameSeries> {
        if self.p() != other.p() {
            return Err(KronError::DimensionMismatch {
                expected: format!("p = {}", self.p()),
                actual: format!("p = {}", other.p()),
            });
        }
        let n = self.len() + other.len();
        let mut frames = DMatrix::zeros(self.p(), n);
        frames.columns_mut(0, self.len()).copy_from(&self.frames);
        frames.columns_mut(self.len(), other.len()).copy_from(&other.frames);
        let labels = match (&self.labels, &other.labels) {
            (None, None) => None,
            _ => Some(
                (0..self.len())
                    .map(|i| self.label(i))
                    .chain((0..other.len()).map(|i| other.label(i)))
                    .collect(),
            ),
        };
        Ok(FrameSeries {
            frames,
            timestamps: (0..n).map(|i| i as f64).collect(),
            labels,
        })
    }
}

/// Per-coordinate detrending fitted on `training_range`: the training mean is
/// removed, and with `linear` the least-squares line in time as well.
pub fn detrend(series: &FrameSeries, training_range: Range<usize>, linear: bool) -> Result<FrameSeries> {
    if training_range.is_empty() || training_range.end > series.len() {
        return Err(KronError::InvalidParameter(format!(
            "training range {training_range:?} empty or outside {} frames",
            series.len()
        )));
    }
    let train = series.frames.columns(training_range.start, training_range.len());
    let ts = &series.timestamps[training_range.clone()];
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let t_var: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let mut out = series.clone();
    for c in 0..series.p() {
        let row = train.row(c);
        let mean = row.iter().sum::<f64>() / n;
        let slope = if linear && t_var > 0.0 {
            row.iter().zip(ts).map(|(y, t)| (y - mean) * (t - t_mean)).sum::<f64>() / t_var
        } else {
            0.0
        };
        for f in 0..series.len() {
            let fit = mean + slope * (series.timestamps[f] - t_mean);
            out.frames[(c, f)] -= fit;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkLabel {
    Anomalous,
    Nominal,
    Excluded,
}

impl ChunkLabel {
    /// Strictly more than 75% of frames on one side, otherwise excluded.
    pub fn from_frame_labels(labels: &[u8]) -> Self {
        let n = labels.len();
        let ones = labels.iter().filter(|&&l| l == 1).count();
        // ones/n > 3/4  <=>  4·ones > 3n
        if 4 * ones > 3 * n {
            ChunkLabel::Anomalous
        } else if 4 * (n - ones) > 3 * n {
            ChunkLabel::Nominal
        } else {
            ChunkLabel::Excluded
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// Length `pT`, frames concatenated in time order (space fastest).
    pub vector: DVector<f64>,
    pub label: ChunkLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub t: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

impl WindowSet {
    /// Window vectors as columns of a `pT × n` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.windows.iter().map(|w| w.vector.clone()).collect();
        if cols.is_empty() {
            return DMatrix::zeros(0, 0);
        }
        DMatrix::from_columns(&cols)
    }

    pub fn filter(&self, keep: impl Fn(&Window) -> bool) -> WindowSet {
        WindowSet {
            t: self.t,
            stride: self.stride,
            windows: self.windows.iter().filter(|w| keep(w)).cloned().collect(),
        }
    }

    pub fn count(&self, label: ChunkLabel) -> usize {
        self.windows.iter().filter(|w| w.label == label).count()
    }
}

pub fn make_windows(series: &FrameSeries, t: usize, stride: usize) -> Result<WindowSet> {
    if t == 0 || stride == 0 {
        return Err(KronError::InvalidParameter("window length and stride must be positive".into()));
    }
    if series.len() < t {
        return Err(KronError::InsufficientData {
            required: t,
            actual: series.len(),
        });
    }
    let p = series.p();
    let windows = (0..=series.len() - t)
        .step_by(stride)
        .map(|start| {
            let slice = series.frames.columns(start, t);
            let vector = DVector::from_iterator(p * t, slice.iter().copied());
            let labels: Vec<u8> = (start..start + t).map(|i| series.label(i)).collect();
            Window {
                start,
                vector,
                label: ChunkLabel::from_frame_labels(&labels),
            }
        })
        .collect();
    Ok(WindowSet { t, stride, windows })
}

/// Minimum eigenvalue ratio accepted by [`mahalanobis_scores`].
pub const CONDITION_FLOOR: f64 = 1e-12;

/// `xᵀ Σ⁻¹ x` per window via a Cholesky factorization.
pub fn mahalanobis_scores(windows: &WindowSet, sigma: &DenseCovariance) -> Result<Vec<f64>> {
    if windows.windows.is_empty() {
        return Ok(Vec::new());
    }
    let dim = sigma.dims().dim();
    let xs = windows.matrix();
    if xs.nrows() != dim {
        return Err(KronError::DimensionMismatch {
            expected: format!("window length {dim}"),
            actual: format!("window length {}", xs.nrows()),
        });
    }
    let (lo, hi) = linalg::min_max_eigenvalue(sigma.matrix());
    if hi <= 0.0 || lo <= CONDITION_FLOOR * hi {
        return Err(KronError::NotPositiveDefinite(format!(
            "eigenvalue range [{lo:.3e}, {hi:.3e}] fails the {CONDITION_FLOOR:e} condition floor"
        )));
    }
    let chol = linalg::cholesky(sigma.matrix())?;
    Ok(linalg::quad_forms(&chol, &xs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Descending; the first entry is `+∞` (the empty detection set).
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC over all distinct score thresholds; higher scores mean more anomalous.
/// `labels[i]` is true for anomalous.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(KronError::DimensionMismatch {
            expected: format!("{} labels", scores.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(KronError::InvalidParameter("ROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(KronError::Numerical("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (px, py) = (fpr[fpr.len() - 1], tpr[tpr.len() - 1]);
        auc += (x - px) * (y + py) * 0.5;
        thresholds.push(thr);
        fpr.push(x);
        tpr.push(y);
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}
