mod common;

use num_complex::Complex64;
use proptest::prelude::*;

use opindex::linalg::{self, tolerances, DenseMatrix};
use opindex::scattering::{self as sc, Potential};
use opindex::toeplitz::{self as tp, CircleSymbol, HalfInteger, Symbol};
use opindex::witten::{self as wt, PerturbationProfile};

fn complex_matrix(n: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n).prop_map(move |v| {
        DenseMatrix::from_row_major(n, n, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
    })
}

fn hermitian(n: usize) -> impl Strategy<Value = DenseMatrix> {
    complex_matrix(n).prop_map(|m| m.symmetrize().unwrap())
}

fn modulated_monomial(k: i64, eps: f64) -> CircleSymbol {
    CircleSymbol::new(
        move |t| Complex64::from_polar(1.0 + eps * t.cos(), k as f64 * t),
        HalfInteger::ZERO,
        8 * (k.unsigned_abs() as usize + 4),
    )
    .unwrap()
}

/// Depths whose `z₀ = √V₀` (a = 1) stays clear of the thresholds `mπ/2`.
fn generic_depth() -> impl Strategy<Value = f64> {
    (0.2f64..30.0).prop_filter("away from a threshold", |v| {
        let z0 = v.sqrt();
        let r = z0 / std::f64::consts::FRAC_PI_2;
        (r - r.round()).abs() > 0.05
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn heat_operators_form_a_semigroup(m in hermitian(8), s in 0.05f64..3.0, t in 0.05f64..3.0) {
        let lhs = linalg::heat_operator(&m, s).unwrap().matmul(&linalg::heat_operator(&m, t).unwrap()).unwrap();
        let rhs = linalg::heat_operator(&m, s + t).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= tolerances::SEMIGROUP_REL * rhs.max_abs());
    }

    #[test]
    fn trace_of_commutator_vanishes(a in complex_matrix(10), b in complex_matrix(10)) {
        let ab = linalg::trace(&a.matmul(&b).unwrap()).unwrap();
        let ba = linalg::trace(&b.matmul(&a).unwrap()).unwrap();
        prop_assert!((ab - ba).norm() <= 1e-10 * (1.0 + ab.norm()));
    }

    #[test]
    fn eigendecomposition_reconstructs(m in hermitian(12)) {
        let eig = linalg::herm_eig(&m).unwrap();
        prop_assert!(eig.reconstruction_residual(&m) <= tolerances::RECONSTRUCTION_REL * m.max_abs().max(1.0));
        prop_assert!(eig.orthonormality_residual() <= tolerances::ORTHONORMAL_ABS);
    }

    #[test]
    fn winding_is_stable_under_refinement(k in -6i64..=6, eps in -0.9f64..0.9) {
        prop_assert_eq!(tp::winding_number(Symbol::Circle(&modulated_monomial(k, eps))).unwrap(), k);
    }

    #[test]
    fn svd_index_agrees_with_winding(k in -3i64..=3, eps in -0.6f64..0.6) {
        let report = tp::symbol_index_report(&modulated_monomial(k, eps), 48, 6, tolerances::SVD_ZERO).unwrap();
        let svd = report.svd_kernel_dim.unwrap() as i64 - report.svd_cokernel_dim.unwrap() as i64;
        prop_assert_eq!(svd, -report.winding.unwrap());
        prop_assert!(report.verdict.certain);
    }

    #[test]
    fn closed_form_is_linear(mu1 in -3.0f64..3.0, mu2 in -3.0f64..3.0) {
        let w = |mu: f64| wt::witten_index_closed_form(&PerturbationProfile::lorentzian(mu)).unwrap().value;
        prop_assert!((w(mu1) + w(mu2) - w(mu1 + mu2)).abs() <= 1e-12);
        prop_assert!((w(mu1) - common::lorentzian_index(mu1)).abs() <= 1e-12);
    }

    #[test]
    fn scattering_matrix_is_unitary(v0 in 0.1f64..40.0, a in 0.3f64..2.0, k in 1e-3f64..60.0) {
        let v = Potential::square_well(v0, a).unwrap();
        let s = sc::s_from_transfer(&sc::transfer_matrix(&v, k).unwrap());
        prop_assert!(sc::unitarity_residual(&s) <= sc::UNITARITY_TOL);
    }

    #[test]
    fn scattering_matches_plane_wave_matching(v0 in 0.1f64..40.0, a in 0.3f64..2.0, k in 1e-3f64..60.0) {
        let v = Potential::square_well(v0, a).unwrap();
        let s = sc::s_from_transfer(&sc::transfer_matrix(&v, k).unwrap());
        let oracle = common::square_well_s(v0, a, k);
        prop_assert!(sc::mat2_max_diff(&s, &oracle) <= 1e-6);
        prop_assert!((s[0].norm_sqr() - common::transmission_probability(v0, a, k)).abs() <= 1e-6);
    }

    #[test]
    fn bound_states_match_matching_conditions(v0 in generic_depth()) {
        let v = Potential::square_well(v0, 1.0).unwrap();
        let n = sc::bound_states(&v, &sc::default_bound_state_grid(&v)).unwrap();
        prop_assert_eq!(n, common::bound_state_count(v0, 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn levinson_holds_for_generic_wells(v0 in generic_depth()) {
        let r = sc::levinson_check(&Potential::square_well(v0, 1.0).unwrap()).unwrap();
        prop_assert_eq!(r.resonance_flag, 0);
        prop_assert!(r.residual <= sc::LEVINSON_TOL);
        prop_assert!(r.curve.unitarity_residuals.iter().all(|&u| u <= sc::UNITARITY_TOL));
    }

    #[test]
    fn corrected_index_counts_bound_states(v0 in generic_depth()) {
        let v = Potential::square_well(v0, 1.0).unwrap();
        let n = sc::bound_states(&v, &sc::default_bound_state_grid(&v)).unwrap();
        let line = sc::exp_resample(&sc::default_curve(&v).unwrap()).unwrap();
        let sigma = sc::build_sigma(&line.s_minus_infinity).unwrap();
        let c = sc::corrected_index(&line, &sigma).unwrap();
        prop_assert_eq!(c.fredholm_index, n as i64);
        prop_assert!(c.decomposition_residual <= sc::DECOMPOSITION_TOL);
    }

    #[test]
    fn sigma_index_is_zero_or_half(theta in 0.01f64..std::f64::consts::PI, phi in 0.0f64..6.28, flip in any::<bool>()) {
        // conjugate a diagonal limit by a rotation-with-phase
        let (c, s) = (phi.cos(), phi.sin());
        let e = Complex64::from_polar(1.0, phi / 3.0);
        let u = [Complex64::new(c, 0.0), -e.conj() * s, e * s, Complex64::new(c, 0.0)];
        let d = if flip {
            [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.0)]
        } else {
            let z = Complex64::from_polar(1.0, theta);
            [z.conj(), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), z]
        };
        let limit = sc::mat2_mul(&sc::mat2_mul(&u, &d), &sc::mat2_adjoint(&u));
        let sigma = sc::build_sigma(&limit).unwrap();
        prop_assert!(sc::mat2_max_diff(&sigma.limit_minus(), &limit) <= 1e-8);
        prop_assert!(sc::mat2_max_diff(&sigma.limit_plus(), &sc::IDENTITY2) <= 1e-8);
        let w = sc::witten_index_sigma(&sigma).unwrap().value;
        let expected = if flip { 0.5 } else { 0.0 };
        prop_assert!((w - expected).abs() <= 1e-6);
    }
}
