//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{KronError, Result};

/// Thin SVD with singular triplets sorted by nonincreasing singular value.
pub struct SortedSvd {
    /// Left singular vectors as columns.
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        if k == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                singular_values: Vec::new(),
                v: DMatrix::zeros(cols, 0),
            };
        }
        // nalgebra's SVD loses accuracy in the singular vectors of the larger
        // dimension when the spectrum is nearly degenerate (errors of order
        // of the small singular values), which breaks the exact descent of
        // soft-impute. faer is used instead, with nalgebra kept as fallback.
        let a = faer::Mat::from_fn(rows, cols, |i, j| m[(i, j)]);
        match a.thin_svd() {
            Ok(svd) => {
                let s = svd.S().column_vector();
                Self {
                    u: DMatrix::from_fn(rows, k, |i, j| svd.U()[(i, j)]),
                    singular_values: (0..k).map(|j| s[j]).collect(),
                    v: DMatrix::from_fn(cols, k, |i, j| svd.V()[(i, j)]),
                }
            }
            Err(_) => {
                log::warn!("faer SVD did not converge on a {rows}x{cols} matrix; using nalgebra");
                Self::nalgebra(m)
            }
        }
    }

    fn nalgebra(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        // The bidiagonalization is unreliable on rank-deficient wide inputs,
        // so wide matrices are decomposed through their transpose.
        let (u, v_t, sv) = if rows < cols {
            let svd = m.transpose().svd(true, true);
            (svd.v_t.expect("requested V^T").transpose(), svd.u.expect("requested U").transpose(), svd.singular_values)
        } else {
            let svd = m.clone().svd(true, true);
            (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"), svd.singular_values)
        };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        let mut su = DMatrix::zeros(rows, k);
        let mut sv_out = Vec::with_capacity(k);
        let mut svv = DMatrix::zeros(cols, k);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            svv.set_column(dst, &v_t.row(src).transpose());
            sv_out.push(sv[src]);
        }
        Self {
            u: su,
            singular_values: sv_out,
            v: svv,
        }
    }

    /// Sum of `weights[k] * u_k v_kᵀ` over the given leading terms.
    pub fn reconstruct(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.u.nrows(), self.v.nrows());
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                out.ger(w, &self.u.column(k), &self.v.column(k), 1.0);
            }
        }
        out
    }
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_max_eigenvalue(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    (ev[0], ev[ev.len() - 1])
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| KronError::NotPositiveDefinite("Cholesky factorization failed".into()))
}

/// Quadratic forms `x_iᵀ Σ⁻¹ x_i` for every column of `xs`, via the Cholesky factor.
pub fn quad_forms(chol: &Cholesky<f64, Dyn>, xs: &DMatrix<f64>) -> Vec<f64> {
    // l_dirty carries stale entries above the diagonal; the triangular solve never reads them.
    let l = chol.l_dirty();
    let mut y = xs.clone();
    l.solve_lower_triangular_mut(&mut y);
    y.column_iter().map(|c| c.norm_squared()).collect()
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky(m)?.inverse())
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Relative Frobenius change `‖new − old‖ / max(‖old‖, tiny)`.
pub fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm().max(f64::MIN_POSITIVE);
    (new - old).norm() / denom
}

/// Vectorize column-major.
pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col_major`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Log-determinant of an SPD matrix from its Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}
