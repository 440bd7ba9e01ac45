//! Property tests for the algebraic invariants that hold for arbitrary
//! coefficients, with proptest-generated inputs.

use num_complex::Complex64 as C;
use proptest::prelude::*;

use kirchhoff_kam::context::FrequencyContext;
use kirchhoff_kam::field::SpaceTimeField;
use kirchhoff_kam::toeplitz::ToeplitzOperator;

fn ctx() -> FrequencyContext {
    FrequencyContext::new(vec![1.465571], 0.1, 1.5, 3, 3).unwrap()
}

fn field_from(values: &[(i32, i32, f64, f64)]) -> SpaceTimeField {
    let c = ctx();
    let mut f = SpaceTimeField::zero(c.field_grid(), c.j_max);
    for &(l, j, re, im) in values {
        let l = l.rem_euclid(2 * c.l_max + 1) - c.l_max;
        let j = j.rem_euclid(2 * c.j_max + 1) - c.j_max;
        f.set_at(&[l], j, f.get_at(&[l], j) + C::new(re, im));
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Norms are monotone in s and conjugation is a norm-preserving involution.
    #[test]
    fn norm_monotone_and_conj_involutive(
        entries in prop::collection::vec((any::<i32>(), any::<i32>(), -1.0f64..1.0, -1.0f64..1.0), 1..12),
        s1 in 0.0f64..3.0,
        ds in 0.0f64..3.0,
    ) {
        let f = field_from(&entries);
        prop_assert!(f.sobolev_norm(s1) <= f.sobolev_norm(s1 + ds) * (1.0 + 1e-12));
        let fc = f.conj_field();
        prop_assert!(fc.conj_field().sub(&f).max_abs() == 0.0);
        prop_assert!((fc.sobolev_norm(s1) - f.sobolev_norm(s1)).abs() <= 1e-12 * (1.0 + f.sobolev_norm(s1)));
    }

    /// The convolution product evaluates pointwise like the function product
    /// when the output band is wide enough to hold it.
    #[test]
    fn product_matches_pointwise_values(
        a in prop::collection::vec((any::<i32>(), any::<i32>(), -1.0f64..1.0, -1.0f64..1.0), 1..8),
        b in prop::collection::vec((any::<i32>(), any::<i32>(), -1.0f64..1.0, -1.0f64..1.0), 1..8),
        phi in 0.0f64..std::f64::consts::TAU,
        x in 0.0f64..std::f64::consts::TAU,
    ) {
        let c = ctx();
        let u = field_from(&a);
        let v = field_from(&b);
        let wide = kirchhoff_kam::LGrid::new(1, 2 * c.l_max);
        let p = u.embedded(wide, 2 * c.j_max).product(&v.embedded(wide, 2 * c.j_max));
        let lhs = p.value_at(&[phi], x);
        let rhs = u.value_at(&[phi], x) * v.value_at(&[phi], x);
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    /// Structural maps on operators: the adjoint is the conjugate transpose
    /// and all three maps are involutions.
    #[test]
    fn operator_structural_maps(seed in any::<u64>()) {
        use rand::SeedableRng;
        let c = ctx();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let r = ToeplitzOperator::random(c.op_grid(), c.j_max, 0.5, 0.5, &mut rng);
        let a1 = r.adjoint_op();
        let a2 = r.conj_op().transpose_op();
        prop_assert!(a1.sub(&a2).max_abs() <= 1e-14);
        prop_assert!(r.transpose_op().transpose_op().sub(&r).max_abs() == 0.0);
        prop_assert!(r.conj_op().conj_op().sub(&r).max_abs() == 0.0);
        prop_assert!(r.adjoint_op().adjoint_op().sub(&r).max_abs() == 0.0);
    }
}
