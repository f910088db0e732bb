//! Invariants checked on random inputs.

use std::sync::Arc;

use degenlap::distortion::{adjugate, distortion_scalars, distortion_tensor, k_sandwich_holds, operator_norm, DMatrix};
use degenlap::energy::{
    monotonicity_gap, vector_inequalities_check, EnergyForm, GridDomain, GridFunction, Mask, MatrixField, NodeKind,
};
use degenlap::io::{format_float, parse_float};
use degenlap::weights::{ap_constant, rh_constant, tau_exponent, SamplingPlan, Weight};
use degenlap::{BoxDomain, MetricSpace};
use proptest::prelude::*;

fn square(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
    })
}

/// Matrices with positive determinant, kept away from singularity.
fn orientation_preserving(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    square(max_n).prop_filter_map("well conditioned, det > 0", |mut a| {
        if a.determinant() < 0.0 {
            a.row_mut(0).neg_mut();
        }
        let svd = a.clone().svd(false, false);
        let (hi, lo) = (svd.singular_values.max(), svd.singular_values.min());
        (lo > 1e-3 * hi).then_some(a)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn adjugate_inverts_up_to_determinant(a in square(5)) {
        let n = a.nrows();
        let scale = operator_norm(&a).powi(n as i32).max(1e-300);
        let err = (&a * adjugate(&a) - DMatrix::identity(n, n) * a.determinant()).amax();
        prop_assert!(err <= 1e-11 * scale, "err {err}, scale {scale}");
    }

    #[test]
    fn adjugate_reverses_products(a in square(4), b in square(4)) {
        prop_assume!(a.nrows() == b.nrows());
        let n = a.nrows() as i32;
        let lhs = adjugate(&(&a * &b));
        let rhs = adjugate(&b) * adjugate(&a);
        let scale = (operator_norm(&a) * operator_norm(&b)).powi(n - 1).max(1e-300);
        prop_assert!((lhs - rhs).amax() <= 1e-11 * scale);
    }

    #[test]
    fn distortion_sandwich_and_unit_tensor(a in orientation_preserving(4)) {
        let n = a.nrows();
        let s = distortion_scalars(&a).unwrap();
        prop_assert!(s.k_o >= 1.0 - 1e-9 && s.k_i >= 1.0 - 1e-9);
        prop_assert!(k_sandwich_holds(s.k_o, s.k_i, n));
        let g = distortion_tensor(&a, s.det).unwrap();
        prop_assert!((g.determinant() - 1.0).abs() < 1e-8);
        prop_assert!((&g - g.transpose()).amax() < 1e-9 * g.amax());
    }

    #[test]
    fn floats_round_trip(v in any::<f64>()) {
        let back = parse_float(&format_float(v)).unwrap();
        prop_assert!(back == v || (v.is_nan() && back.is_nan()));
    }

    #[test]
    fn tau_reduces_to_dimension(p in 1.01f64..10.0, n in 1usize..8) {
        prop_assert_eq!(tau_exponent(p, n, n).unwrap(), n as f64);
    }

    #[test]
    fn vector_inequalities_hold(p in 1.05f64..6.0, m in 1usize..6, seed in any::<u64>()) {
        let rep = vector_inequalities_check(p, m, 2_000, seed).unwrap();
        prop_assert_eq!(rep.violations(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn power_weight_constants_are_at_least_one(alpha in -0.9f64..2.0, p in 1.2f64..4.0, seed in 0u64..1000) {
        let e1 = MetricSpace::euclidean(1).unwrap();
        let plan = SamplingPlan::new(BoxDomain::cube(1, -1.0, 1.0).unwrap()).with_balls(64).with_budget(64).with_seed(seed);
        let w = Weight::radial_power(1, alpha);
        let ap = ap_constant(&w, p, &e1, &plan).unwrap().estimates.ap.unwrap();
        let rh = rh_constant(&w, 2.0, &e1, &plan).unwrap().estimates.rh.unwrap();
        prop_assert!(ap.value >= 1.0 - 1e-9, "A_p {}", ap.value);
        prop_assert!(rh.value >= 1.0 - 1e-9, "RH_2 {}", rh.value);
    }

    #[test]
    fn monotonicity_gap_is_nonnegative(p in 1.2f64..5.0, seed in any::<u64>()) {
        let space = MetricSpace::euclidean(2).unwrap();
        let d = Arc::new(GridDomain::cube(2, 0.0, 1.0, 6, Mask::Box).unwrap());
        let a = MatrixField::scalar(2, Weight::radial_power(2, 0.5));
        let form = EnergyForm::new(&space, d.clone(), &a, p).unwrap();
        let draw = |k: u64| {
            let mut r = degenlap::rng::stream(seed, k);
            GridFunction::from_values(d.clone(), (0..d.len()).map(|_| degenlap::rng::standard_normal(&mut r)).collect()).unwrap()
        };
        let gap = monotonicity_gap(&form, &draw(0), &draw(1), 0.0).unwrap();
        prop_assert!(gap >= -1e-12, "gap {gap}");
    }

    #[test]
    fn weak_form_is_linear_in_the_test_function(p in 1.2f64..5.0, c in -3.0f64..3.0, seed in any::<u64>()) {
        let space = MetricSpace::euclidean(2).unwrap();
        let d = Arc::new(GridDomain::cube(2, -1.0, 1.0, 8, Mask::Box).unwrap());
        let form = EnergyForm::new(&space, d.clone(), &MatrixField::identity(2), p).unwrap();
        let mut r = degenlap::rng::stream(seed, 0);
        let mut draw = |zero: bool| {
            let v = (0..d.len())
                .map(|i| if zero && d.kind(i) != NodeKind::Interior { 0.0 } else { degenlap::rng::standard_normal(&mut r) })
                .collect();
            GridFunction::from_values(d.clone(), v).unwrap()
        };
        let (u, phi, psi) = (draw(false), draw(true), draw(true));
        let combo = GridFunction::from_values(
            d.clone(),
            phi.values().iter().zip(psi.values()).map(|(a, b)| a + c * b).collect(),
        )
        .unwrap();
        let lhs = form.weak_form(&u, &combo, 1e-3).unwrap();
        let rhs = form.weak_form(&u, &phi, 1e-3).unwrap() + c * form.weak_form(&u, &psi, 1e-3).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }
}
