//! Each sign convention checked against a case with a known answer.

mod common;

use num_complex::Complex64;

use opindex::conventions;
use opindex::grid::GridSpec;
use opindex::linalg::{self, DenseMatrix};
use opindex::scattering::{self as sc, Potential};
use opindex::toeplitz::{self as tp, CircleSymbol, Lattice, Symbol};
use opindex::witten::{self as wt, PerturbationProfile, ThetaProfile};

#[test]
fn index_sign_from_the_unilateral_shift() {
    // T_{e^{iθ}} sends e_n to e_{n+1} on n >= 0: no kernel, e_0 spans the cokernel
    let n = 12;
    let shift = DenseMatrix::from_fn(n + 1, n, |i, j| Complex64::new(if i == j + 1 { 1.0 } else { 0.0 }, 0.0));
    let sv = linalg::singular_values(&shift).unwrap();
    assert!(sv.iter().all(|&s| (s - 1.0).abs() < 1e-12));
    let symbol = CircleSymbol::monomial(1);
    assert_eq!(tp::winding_number(Symbol::Circle(&symbol)).unwrap(), 1);
    let t = tp::toeplitz_operator(&symbol, 16, Lattice::Integer);
    for j in 0..8 {
        assert!((t.entry(2 * (j + 1), 2 * j) - 1.0).norm() < 1e-12);
    }
    let report = tp::symbol_index_report(&symbol, 32, 4, linalg::tolerances::SVD_ZERO).unwrap();
    assert_eq!((report.svd_kernel_dim, report.svd_cokernel_dim), (Some(0), Some(1)));
    assert_eq!(report.verdict.index, conventions::INDEX_WINDING_SIGN);
}

#[test]
fn witten_sign_makes_positive_profiles_positive() {
    let grid = GridSpec::new(20.0, 256).unwrap();
    let a1 = wt::discretize_dirac(&grid);
    let b = PerturbationProfile::lorentzian(1.0);
    let rhs = wt::heat_trace_rhs(&a1, &b, 2.0, 8).unwrap();
    assert!(conventions::WITTEN_RHS_SIGN > 0.0);
    assert!((rhs - common::lorentzian_index(1.0)).abs() < 0.05, "rhs {rhs}");
    let neg = wt::heat_trace_rhs(&a1, &PerturbationProfile::lorentzian(-1.0), 2.0, 8).unwrap();
    assert!((neg + rhs).abs() < 1e-10);
}

#[test]
fn ptf_orientation_matches_the_heat_trace() {
    let x_grid = GridSpec::new(10.0, 32).unwrap();
    let t_grid = GridSpec::new(16.0, 40).unwrap();
    let a1 = wt::discretize_dirac(&x_grid);
    let b = PerturbationProfile::lorentzian(1.0);
    let d = wt::build_suspension(&a1, &b, ThetaProfile::Logistic, &t_grid, &x_grid).unwrap();
    let hd = d.heat_difference().unwrap();
    let rhs = wt::heat_trace_rhs(&a1, &b, 1.0, 8).unwrap();
    assert!(rhs > 0.1);
    // the raw windowed difference has the opposite sign
    assert!(hd.raw(1.0) * rhs < 0.0);
    assert!((hd.oriented(1.0) - rhs).abs() < 0.1 * rhs, "{} vs {rhs}", hd.oriented(1.0));
    assert_eq!(conventions::PTF_LHS_ORIENTATION, -1.0);
}

#[test]
fn levinson_sign_from_the_depth_two_well() {
    let v = Potential::square_well(2.0, 1.0).unwrap();
    assert_eq!(common::bound_state_count(2.0, 1.0), 1);
    let r = sc::levinson_check(&v).unwrap();
    // arg det S falls by π from k = 0 to k = ∞ for one bound state
    assert!((r.phase_winding + std::f64::consts::PI).abs() < 0.05);
    assert_eq!(r.resonance_flag, 0);
    assert_eq!(r.n_bound, 1);
    assert!(r.residual < 0.05);
    assert_eq!(r.convention, conventions::TAG_LEVINSON);
}

#[test]
fn free_particle_is_consistent_without_special_casing() {
    let v = Potential::free();
    let r = sc::levinson_check(&v).unwrap();
    assert_eq!(r.n_bound, 0);
    assert!(r.phase_winding.abs() < 1e-5, "{}", r.phase_winding);
    assert_eq!(r.resonance_flag, 1);
    assert!(r.residual < 1e-5);
}

#[test]
fn s_layout_puts_transmission_on_the_diagonal() {
    let s = common::square_well_s(3.0, 1.0, 0.7);
    let v = Potential::square_well(3.0, 1.0).unwrap();
    let ours = sc::s_from_transfer(&sc::transfer_matrix(&v, 0.7).unwrap());
    assert!(sc::mat2_max_diff(&ours, &s) < 1e-7);
    assert!((ours[0] - ours[3]).norm() < 1e-10);
    // symmetric well: equal reflection from both sides
    assert!((ours[1] - ours[2]).norm() < 1e-7);
    assert_eq!(conventions::TAG_S_LAYOUT, "S=[[t,r-],[r+,t]]");
}

#[test]
fn zero_energy_limit_is_minus_sigma_x_or_minus_one() {
    let generic = sc::exp_resample(&sc::default_curve(&Potential::square_well(2.0, 1.0).unwrap()).unwrap()).unwrap();
    let p = sc::to_parity_basis(&generic.s_minus_infinity);
    assert!(sc::mat2_max_diff(&p, &[-Complex64::new(1.0, 0.0), 0.0.into(), 0.0.into(), 1.0.into()]) < 1e-3);
    let depth = sc::resonance_depth(1.0, 1).unwrap();
    let resonant = sc::exp_resample(&sc::default_curve(&Potential::square_well(depth, 1.0).unwrap()).unwrap()).unwrap();
    let minus_one = [-Complex64::new(1.0, 0.0), 0.0.into(), 0.0.into(), -Complex64::new(1.0, 0.0)];
    assert!(sc::mat2_max_diff(&resonant.s_minus_infinity, &minus_one) < 1e-2);
}

#[test]
fn every_tag_is_distinct() {
    let tags = conventions::all_tags();
    let set: std::collections::BTreeSet<_> = tags.iter().collect();
    assert_eq!(set.len(), tags.len());
}
