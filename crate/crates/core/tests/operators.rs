use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use kroncov::kron_ops::*;
use kroncov::linalg::{kron, vec_col_major};

fn dims() -> impl Strategy<Value = SpaceTimeDims> {
    (1usize..=5, 1usize..=6).prop_map(|(p, t)| SpaceTimeDims::new(p, t).unwrap())
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|a| (&a + a.transpose()) * 0.5)
}

fn covariance() -> impl Strategy<Value = DenseCovariance> {
    dims().prop_flat_map(|d| symmetric(d.dim()).prop_map(move |m| DenseCovariance::new(d, m).unwrap()))
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #[test]
    fn rearrangement_is_a_permutation(sigma in covariance()) {
        let r = rearrange(&sigma);
        prop_assert_eq!(&derearrange(&r), sigma.matrix());
        let mut a: Vec<f64> = r.entries.iter().copied().collect();
        let mut b: Vec<f64> = sigma.matrix().iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rearrangement_is_linear(
        (x, y) in dims().prop_flat_map(|d| (symmetric(d.dim()), symmetric(d.dim())).prop_map(move |(x, y)| (
            DenseCovariance::new(d, x).unwrap(),
            DenseCovariance::new(d, y).unwrap(),
        ))),
        c in -3.0f64..3.0,
    ) {
        let sum = DenseCovariance::new(x.dims(), x.matrix() + y.matrix() * c).unwrap();
        let lhs = rearrange(&sum).entries;
        let rhs = rearrange(&x).entries + rearrange(&y).entries * c;
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }

    #[test]
    fn kronecker_products_rearrange_to_rank_one(
        (a, b) in dims().prop_flat_map(|d| (symmetric(d.t), symmetric(d.p)))
    ) {
        let d = SpaceTimeDims::new(b.nrows(), a.nrows()).unwrap();
        let sigma = DenseCovariance::new(d, kron(&a, &b)).unwrap();
        let outer = vec_col_major(&a) * vec_col_major(&b).transpose();
        prop_assert!(rel(&rearrange(&sigma).entries, &outer) <= 1e-12);
        let assembled = kron_assemble(d, &[(a.clone(), b.clone())], &DVector::zeros(d.p)).unwrap();
        prop_assert!(rel(&rearrange(&assembled).entries, &outer) <= 1e-12);
    }

    #[test]
    fn compression_is_a_left_inverse(
        (d, t) in dims().prop_flat_map(|d| matrix(2 * d.t - 1, d.p * d.p).prop_map(move |m| (d, m)))
    ) {
        let c = ToeplitzCompressed::new(d, t).unwrap();
        let back = toeplitz_project(&toeplitz_embed(&c));
        prop_assert!(rel(&back.entries, &c.entries) <= 1e-12);
    }

    #[test]
    fn embedding_after_compression_is_idempotent(sigma in covariance()) {
        let once = toeplitz_embed(&toeplitz_project(&rearrange(&sigma)));
        let twice = toeplitz_embed(&toeplitz_project(&once));
        prop_assert!(rel(&twice.entries, &once.entries) <= 1e-12);
        // The image is block Toeplitz.
        let dense = derearrange(&once);
        prop_assert!(is_block_toeplitz(&dense, sigma.dims(), 1e-12 * dense.norm().max(1.0)));
    }

    #[test]
    fn compression_preserves_block_toeplitz_norm(sigma in covariance()) {
        // On block-Toeplitz inputs the weighting makes P an isometry.
        let bt = toeplitz_embed(&toeplitz_project(&rearrange(&sigma)));
        let c = toeplitz_project(&bt);
        prop_assert!((c.entries.norm() - bt.entries.norm()).abs() <= 1e-12 * bt.entries.norm().max(1.0));
    }

    #[test]
    fn frobenius_norm_is_preserved(sigma in covariance()) {
        let r = rearrange(&sigma);
        prop_assert!((r.entries.norm() - sigma.matrix().norm()).abs() <= 1e-12 * sigma.matrix().norm().max(1.0));
    }

    #[test]
    fn diag_mask_zero_count(d in dims()) {
        let m = diag_mask(d);
        prop_assert_eq!(m.full.iter().filter(|&&x| x == 0.0).count(), d.p * d.t);
        let zeros_compressed = m.compressed.iter().filter(|&&x| x == 0.0).count();
        // Only the zero-offset row aggregates diagonal entries, and it does so for every diagonal column.
        prop_assert_eq!(zeros_compressed, d.p);
    }

    #[test]
    fn blocks_transpose(sigma in covariance()) {
        let d = sigma.dims();
        for i in 0..d.t {
            for j in 0..d.t {
                prop_assert_eq!(block(&sigma, i, j).unwrap(), block(&sigma, j, i).unwrap().transpose());
            }
        }
    }
}

#[test]
fn small_worked_examples() {
    let d = SpaceTimeDims::new(1, 2).unwrap();
    let sigma = DenseCovariance::new(d, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).unwrap();
    let r = rearrange(&sigma);
    assert_eq!(r.entries, DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 2.0, 4.0]));
    assert_eq!(derearrange(&r), *sigma.matrix());

    let d = SpaceTimeDims::new(2, 2).unwrap();
    let u = DVector::from_vec(vec![1.0, 2.0]);
    let diag = kron_assemble(d, &[], &u).unwrap();
    assert_eq!(*diag.matrix(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 1.0, 2.0])));
    let m = diag_mask(d);
    for k in 0..4 {
        for c in 0..4 {
            let zero = (k == 0 || k == 3) && (c == 0 || c == 3);
            assert_eq!(m.full[(k, c)] == 0.0, zero, "({k}, {c})");
        }
    }
}

#[test]
fn shape_errors() {
    let d = SpaceTimeDims::new(2, 3).unwrap();
    assert!(RearrangedMatrix::new(d, DMatrix::zeros(4, 9)).is_err());
    assert!(ToeplitzCompressed::new(d, DMatrix::zeros(3, 4)).is_err());
    assert!(DenseCovariance::new(d, DMatrix::zeros(5, 5)).is_err());
    assert!(block(&DenseCovariance::identity(d), 3, 0).is_err());
    assert!(SpaceTimeDims::new(0, 1).is_err());
}
