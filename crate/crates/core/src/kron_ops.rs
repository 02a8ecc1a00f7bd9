//! Exact linear operators relating a `pT × pT` spatiotemporal covariance to its
//! Kronecker-factor coordinates.
//!
//! Ordering conventions used throughout the crate:
//!
//! * A space-time vector stores frame `t` coordinate `m` at index `t·p + m`
//!   (space fastest), so `Σ` is a `T × T` grid of `p × p` blocks and
//!   `(A ⊗ B)` with `A` temporal (`T × T`) and `B` spatial (`p × p`) has
//!   block `(i, j)` equal to `A[i, j]·B`.
//! * The rearranged matrix has row `k = j·T + i` holding the column-major
//!   vectorization of block `(i, j)`, so `rearrange(A ⊗ B) = vec(A)·vec(B)ᵀ`.
//! * The Toeplitz-compressed matrix has row `o + T − 1` for the diagonal offset
//!   `o = j − i ∈ [−(T−1), T−1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, KronError, Result};
use crate::linalg;

/// Grid sizes: `p` spatial variables per frame, `t` frames per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceTimeDims {
    pub p: usize,
    pub t: usize,
}

impl SpaceTimeDims {
    pub fn new(p: usize, t: usize) -> Result<Self> {
        if p == 0 || t == 0 {
            return Err(KronError::InvalidParameter(format!(
                "dims must be positive, got p={p}, T={t}"
            )));
        }
        Ok(Self { p, t })
    }

    /// Full space-time dimension `pT`.
    pub fn dim(&self) -> usize {
        self.p * self.t
    }

    pub fn compressed_rows(&self) -> usize {
        2 * self.t - 1
    }

    /// Rows of the rearranged matrix belonging to diagonal offset `o = j − i`.
    pub fn offset_rows(&self, o: isize) -> impl Iterator<Item = usize> + '_ {
        let t = self.t as isize;
        let lo = 0.max(-o);
        let hi = t.min(t - o);
        (lo..hi).map(move |i| ((i + o) * t + i) as usize)
    }

    /// Diagonal offsets `−(T−1) ..= T−1` in compressed row order.
    pub fn offsets(&self) -> impl Iterator<Item = isize> {
        let t = self.t as isize;
        (1 - t)..t
    }

    fn offset_weight(&self, o: isize) -> f64 {
        ((self.t as isize - o.abs()) as f64).sqrt()
    }
}

/// Symmetric `pT × pT` covariance in space-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCovariance {
    dims: SpaceTimeDims,
    entries: DMatrix<f64>,
}

/// Relative symmetry tolerance applied on construction.
pub const SYMMETRY_TOL: f64 = 1e-12;

impl DenseCovariance {
    /// Wraps `entries`, rejecting shape mismatches and matrices that are not
    /// symmetric to [`SYMMETRY_TOL`] relative to the largest entry.
    pub fn new(dims: SpaceTimeDims, entries: DMatrix<f64>) -> Result<Self> {
        let n = dims.dim();
        if entries.shape() != (n, n) {
            return Err(shape_err((n, n), entries.shape()));
        }
        let scale = entries.amax().max(1.0);
        let asym = linalg::asymmetry(&entries);
        if asym > SYMMETRY_TOL * scale {
            return Err(KronError::NotSymmetric { asymmetry: asym });
        }
        Ok(Self { dims, entries })
    }

    /// Wraps `entries` after averaging with its transpose. Used for estimator
    /// outputs that are symmetric up to rounding.
    pub fn symmetrized(dims: SpaceTimeDims, entries: &DMatrix<f64>) -> Result<Self> {
        let n = dims.dim();
        if entries.shape() != (n, n) {
            return Err(shape_err((n, n), entries.shape()));
        }
        Ok(Self {
            dims,
            entries: linalg::symmetrize(entries),
        })
    }

    pub fn identity(dims: SpaceTimeDims) -> Self {
        Self {
            dims,
            entries: DMatrix::identity(dims.dim(), dims.dim()),
        }
    }

    pub fn dims(&self) -> SpaceTimeDims {
        self.dims
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Copy scaled to unit trace.
    pub fn unit_trace(&self) -> DMatrix<f64> {
        &self.entries / self.trace()
    }
}

/// `T² × p²` rearranged image of a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangedMatrix {
    pub dims: SpaceTimeDims,
    pub entries: DMatrix<f64>,
}

impl RearrangedMatrix {
    pub fn new(dims: SpaceTimeDims, entries: DMatrix<f64>) -> Result<Self> {
        let want = (dims.t * dims.t, dims.p * dims.p);
        if entries.shape() != want {
            return Err(shape_err(want, entries.shape()));
        }
        Ok(Self { dims, entries })
    }
}

/// `(2T − 1) × p²` Toeplitz-compressed matrix, one row per diagonal offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzCompressed {
    pub dims: SpaceTimeDims,
    pub entries: DMatrix<f64>,
}

impl ToeplitzCompressed {
    pub fn new(dims: SpaceTimeDims, entries: DMatrix<f64>) -> Result<Self> {
        let want = (dims.compressed_rows(), dims.p * dims.p);
        if entries.shape() != want {
            return Err(shape_err(want, entries.shape()));
        }
        Ok(Self { dims, entries })
    }
}

/// 0/1 masks excluding the entries that land on the covariance diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMask {
    /// `T² × p²`.
    pub full: DMatrix<f64>,
    /// `(2T − 1) × p²`.
    pub compressed: DMatrix<f64>,
}

pub fn rearrange(sigma: &DenseCovariance) -> RearrangedMatrix {
    let dims = sigma.dims;
    RearrangedMatrix {
        dims,
        entries: rearrange_matrix(dims, &sigma.entries),
    }
}

/// Rearrangement of an arbitrary (not necessarily symmetric) `pT × pT` matrix.
pub(crate) fn rearrange_matrix(dims: SpaceTimeDims, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, t) = (dims.p, dims.t);
    let mut out = DMatrix::zeros(t * t, p * p);
    for j in 0..t {
        for i in 0..t {
            let k = j * t + i;
            for n in 0..p {
                for mm in 0..p {
                    out[(k, n * p + mm)] = m[(i * p + mm, j * p + n)];
                }
            }
        }
    }
    out
}

/// Inverse index permutation of [`rearrange`]. The result is a plain matrix:
/// it is symmetric only when `r` is the image of a symmetric matrix.
pub fn derearrange(r: &RearrangedMatrix) -> DMatrix<f64> {
    derearrange_matrix(r.dims, &r.entries)
}

pub(crate) fn derearrange_matrix(dims: SpaceTimeDims, r: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, t) = (dims.p, dims.t);
    let mut out = DMatrix::zeros(p * t, p * t);
    for j in 0..t {
        for i in 0..t {
            let k = j * t + i;
            for n in 0..p {
                for mm in 0..p {
                    out[(i * p + mm, j * p + n)] = r[(k, n * p + mm)];
                }
            }
        }
    }
    out
}

pub fn toeplitz_project(r: &RearrangedMatrix) -> ToeplitzCompressed {
    ToeplitzCompressed {
        dims: r.dims,
        entries: project_rows(r.dims, &r.entries),
    }
}

/// Weighted diagonal-group sum on any matrix with `T²` rows.
pub(crate) fn project_rows(dims: SpaceTimeDims, a: &DMatrix<f64>) -> DMatrix<f64> {
    let t = dims.t as isize;
    let mut out = DMatrix::zeros(dims.compressed_rows(), a.ncols());
    for o in dims.offsets() {
        let row = (o + t - 1) as usize;
        let w = 1.0 / dims.offset_weight(o);
        for k in dims.offset_rows(o) {
            for c in 0..a.ncols() {
                out[(row, c)] += a[(k, c)];
            }
        }
        for c in 0..a.ncols() {
            out[(row, c)] *= w;
        }
    }
    out
}

pub fn toeplitz_embed(t: &ToeplitzCompressed) -> RearrangedMatrix {
    RearrangedMatrix {
        dims: t.dims,
        entries: embed_rows(t.dims, &t.entries),
    }
}

/// Adjoint of [`project_rows`] on any matrix with `2T − 1` rows.
pub(crate) fn embed_rows(dims: SpaceTimeDims, a: &DMatrix<f64>) -> DMatrix<f64> {
    let t = dims.t as isize;
    let mut out = DMatrix::zeros(dims.t * dims.t, a.ncols());
    for o in dims.offsets() {
        let row = (o + t - 1) as usize;
        let w = 1.0 / dims.offset_weight(o);
        for k in dims.offset_rows(o) {
            for c in 0..a.ncols() {
                out[(k, c)] = a[(row, c)] * w;
            }
        }
    }
    out
}

pub fn diag_mask(dims: SpaceTimeDims) -> EntryMask {
    let p = dims.p;
    let mut full = DMatrix::from_element(dims.t * dims.t, p * p, 1.0);
    for k in dims.offset_rows(0) {
        for c in 0..p {
            full[(k, c * p + c)] = 0.0;
        }
    }
    let compressed = project_rows(dims, &full).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    EntryMask { full, compressed }
}

/// `Σ_i T_i ⊗ S_i + I_T ⊗ diag(u)`.
pub fn kron_assemble(
    dims: SpaceTimeDims,
    factors: &[(DMatrix<f64>, DMatrix<f64>)],
    u: &DVector<f64>,
) -> Result<DenseCovariance> {
    let (p, t) = (dims.p, dims.t);
    if u.len() != p {
        return Err(shape_err((p, 1), (u.len(), 1)));
    }
    let mut out = DMatrix::zeros(p * t, p * t);
    for (temporal, spatial) in factors {
        if temporal.shape() != (t, t) {
            return Err(shape_err((t, t), temporal.shape()));
        }
        if spatial.shape() != (p, p) {
            return Err(shape_err((p, p), spatial.shape()));
        }
        out += linalg::kron(temporal, spatial);
    }
    for f in 0..t {
        for m in 0..p {
            out[(f * p + m, f * p + m)] += u[m];
        }
    }
    DenseCovariance::symmetrized(dims, &out)
}

/// The `(i, j)` `p × p` block, zero-based frame indices.
pub fn block(sigma: &DenseCovariance, i: usize, j: usize) -> Result<DMatrix<f64>> {
    let SpaceTimeDims { p, t } = sigma.dims;
    if i >= t || j >= t {
        return Err(KronError::IndexOutOfRange(format!(
            "block ({i}, {j}) outside {t}x{t} grid"
        )));
    }
    Ok(sigma.entries.view((i * p, j * p), (p, p)).into_owned())
}

/// Whether a `T × T` matrix is Toeplitz to the given absolute tolerance.
pub fn is_toeplitz(a: &DMatrix<f64>, tol: f64) -> bool {
    let t = a.nrows();
    (1..t).all(|i| (1..a.ncols()).all(|j| (a[(i, j)] - a[(i - 1, j - 1)]).abs() <= tol))
}

/// Whether every block satisfies `block(i, j) = block(i+1, j+1)` to `tol`.
pub fn is_block_toeplitz(sigma: &DMatrix<f64>, dims: SpaceTimeDims, tol: f64) -> bool {
    let (p, t) = (dims.p, dims.t);
    for i in 1..t {
        for j in 1..t {
            let a = sigma.view((i * p, j * p), (p, p));
            let b = sigma.view(((i - 1) * p, (j - 1) * p), (p, p));
            if (a - b).amax() > tol {
                return false;
            }
        }
    }
    true
}
