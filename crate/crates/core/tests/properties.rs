//! Cross-module property tests.

use loft_kit::adapter::{row_gram, LoftAdapter, LoftFactor, Provenance, SupportBasis};
use loft_kit::linalg::Matrix;
use loft_kit::rng::Rng;
use loft_kit::transform::{cayley, SkewParam, TransformSpec};
use proptest::prelude::*;

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-10.0_f64..10.0, rows * cols)
        .prop_map(move |data| Matrix::new(rows, cols, data).expect("finite literals"))
}

fn skew_strategy(dim: usize) -> impl Strategy<Value = SkewParam> {
    proptest::collection::vec(-2.0_f64..2.0, dim * (dim - 1) / 2)
        .prop_map(move |lower| SkewParam::from_lower(dim, lower).expect("finite literals"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matmul_is_associative(a in matrix_strategy(5, 4), b in matrix_strategy(4, 6), c in matrix_strategy(6, 3)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        prop_assert!(left.sub(&right).unwrap().frobenius_norm() <= 1e-10 * scale);
    }

    #[test]
    fn svd_reconstructs(a in matrix_strategy(6, 9)) {
        let svd = a.svd().unwrap();
        let err = svd.reconstruct().sub(&a).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-10 * a.frobenius_norm().max(1e-30));
    }

    #[test]
    fn sym_eig_values_sum_to_trace(a in matrix_strategy(6, 6)) {
        let sym = a.add(&a.transpose()).unwrap().scale(0.5);
        let eig = sym.sym_eig().unwrap();
        let sum: f64 = eig.values.iter().sum();
        let scale = sym.trace().abs().max(1.0);
        prop_assert!((sum - sym.trace()).abs() <= 1e-9 * scale);
    }

    #[test]
    fn cayley_image_is_orthogonal(e in skew_strategy(5)) {
        let q = cayley(&e).unwrap();
        let dev = q.transpose().matmul(&q).unwrap()
            .sub(&Matrix::identity(5)).unwrap().frobenius_norm();
        prop_assert!(dev <= 1e-10);
        // Rotation group: determinant +1.
        prop_assert!((q.determinant().unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn adapter_apply_equals_merged_matmul(seed in 0u64..1000) {
        let mut rng = Rng::seed_from_u64(seed);
        let w0 = Matrix::gaussian(5, 7, &mut rng);
        let x = Matrix::gaussian(7, 3, &mut rng);
        let support = SupportBasis::new(
            Matrix::gaussian(3, 7, &mut rng).qr_orthonormal_rows().unwrap(),
            Provenance::Random,
        ).unwrap();
        let factor = LoftFactor::new(
            support,
            TransformSpec::Orthogonal(SkewParam::random(3, 1.0, &mut rng)),
        ).unwrap();
        let adapter = LoftAdapter::new(w0, vec![factor]).unwrap();
        let implicit = adapter.apply(&x).unwrap();
        let explicit = adapter.merge().unwrap().matmul(&x).unwrap();
        prop_assert!(implicit.max_abs_diff(&explicit) <= 1e-11);
    }
}

#[test]
fn qr_gram_holds_over_many_inputs() {
    let mut rng = Rng::seed_from_u64(314);
    for trial in 0..1000 {
        let r = 1 + rng.below(6);
        let d = r + rng.below(12);
        let a = Matrix::gaussian(r, d, &mut rng);
        let q = a.qr_orthonormal_rows().unwrap();
        let dev = q.row_gram_deviation();
        assert!(dev <= 1e-10, "trial {trial}: deviation {dev:.3e}");
    }
}

/// Negative control: a double-sided update Q W R preserves singular
/// values but rotates the row Gram matrix, unlike the right-multiplicative
/// form. This is exactly why the adapter is right-sided only.
#[test]
fn double_sided_update_rotates_row_gram() {
    let mut rng = Rng::seed_from_u64(2718);
    let w0 = Matrix::gaussian(5, 8, &mut rng);
    let q = cayley(&SkewParam::random(5, 1.0, &mut rng)).unwrap();
    let r = cayley(&SkewParam::random(8, 1.0, &mut rng)).unwrap();
    let w_double = q.matmul(&w0).unwrap().matmul(&r).unwrap();

    // Singular values survive...
    let sv0 = w0.svd().unwrap().sigma;
    let sv1 = w_double.svd().unwrap().sigma;
    for (a, b) in sv0.iter().zip(&sv1) {
        assert!((a - b).abs() <= 1e-9 * sv0[0]);
    }
    // ...but the row Gram matrix is rotated, not preserved entrywise.
    let g0 = row_gram(&w0);
    let g1 = row_gram(&w_double);
    let drift = g1.sub(&g0).unwrap().frobenius_norm() / g0.frobenius_norm();
    assert!(
        drift > 1e-2,
        "double-sided Gram drift unexpectedly small: {drift:.3e}"
    );
    // The rotated Gram is similar to the original: G1 = Q G0 Q^T.
    let conjugated = q.matmul(&g0).unwrap().matmul(&q.transpose()).unwrap();
    assert!(g1.sub(&conjugated).unwrap().frobenius_norm() <= 1e-9 * g0.frobenius_norm());

    // Right-multiplicative control on the same draw: Gram preserved.
    let w_right = w0.matmul(&r).unwrap();
    let g_right = row_gram(&w_right);
    assert!(g_right.sub(&g0).unwrap().frobenius_norm() <= 1e-9 * g0.frobenius_norm());
}
