use std::f64::consts::PI;
use std::sync::Arc;

use annulus_rti::profiles::PhysParams;
use annulus_rti::radial_ops::{build_grid, build_trial_space, RadialGrid, Scheme};
use nalgebra::DVector;
use proptest::prelude::*;

fn grid(n: usize, scheme: Scheme) -> RadialGrid {
    build_grid(n, &PhysParams::baseline(), scheme).unwrap()
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn too_few_nodes_is_rejected() {
    assert!(build_grid(7, &PhysParams::baseline(), Scheme::Chebyshev).is_err());
    assert!(build_grid(7, &PhysParams::baseline(), Scheme::FiniteDifference4).is_err());
}

#[test]
fn nodes_span_the_interval() {
    for scheme in [Scheme::Chebyshev, Scheme::FiniteDifference4] {
        let g = grid(17, scheme);
        assert_eq!(g.nodes[0], 1.0);
        assert_eq!(g.nodes[16], 2.0);
        assert!(g.nodes.as_slice().windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn derivative_of_identity_is_one() {
    for scheme in [Scheme::Chebyshev, Scheme::FiniteDifference4] {
        let g = grid(8, scheme);
        let d = g.d1() * &g.nodes;
        assert!(max_abs(&d.add_scalar(-1.0)) <= 1e-10, "{scheme:?}");
        let ones = DVector::from_element(8, 1.0);
        for m in 0..4 {
            assert!(max_abs(&(&g.d[m] * &ones)) <= 1e-10);
        }
    }
}

#[test]
fn quadrature_of_r() {
    let g = grid(64, Scheme::Chebyshev);
    let v = g.integrate(g.nodes.as_slice());
    assert!((v - 1.5).abs() <= 1e-12);
}

#[test]
fn chebyshev_quadrature_exact_to_degree_n_minus_one() {
    let n = 24;
    let g = grid(n, Scheme::Chebyshev);
    for p in 0..n {
        let f: Vec<f64> = g.nodes.iter().map(|r| (r - 1.5f64).powi(p as i32)).collect();
        let exact = if p % 2 == 1 { 0.0 } else { 2.0 * 0.5f64.powi(p as i32 + 1) / (p as f64 + 1.0) };
        assert!((g.integrate(&f) - exact).abs() <= 1e-12, "degree {p}");
    }
}

#[test]
fn fd_quadrature_exact_to_degree_four() {
    for n in [8, 9, 33, 100] {
        let g = grid(n, Scheme::FiniteDifference4);
        for p in 0..=4 {
            let f: Vec<f64> = g.nodes.iter().map(|r| r.powi(p)).collect();
            let exact = (2f64.powi(p + 1) - 1.0) / (p as f64 + 1.0);
            assert!((g.integrate(&f) - exact).abs() <= 1e-12, "n {n} degree {p}");
        }
    }
}

#[test]
fn second_derivative_of_sine() {
    let g = grid(64, Scheme::Chebyshev);
    let f = g.nodes.map(|r| (PI * r).sin());
    let exact = g.nodes.map(|r| -PI * PI * (PI * r).sin());
    assert!(max_abs(&(g.d2() * &f - exact)) <= 1e-8);
}

fn d4_error(g: &RadialGrid) -> f64 {
    let f = g.nodes.map(|r| (PI * (r - 1.0)).sin());
    let exact = g.nodes.map(|r| PI.powi(4) * (PI * (r - 1.0)).sin());
    max_abs(&(g.d4() * &f - exact))
}

#[test]
fn fourth_derivative_converges_spectrally() {
    let e8 = d4_error(&grid(10, Scheme::Chebyshev));
    let e16 = d4_error(&grid(20, Scheme::Chebyshev));
    let e32 = d4_error(&grid(30, Scheme::Chebyshev));
    assert!(e16 < 1e-3 * e8, "{e8} {e16}");
    assert!(e32 < 1e-5, "{e32}");
}

#[test]
fn fourth_derivative_converges_at_fourth_order() {
    let errs: Vec<f64> = [21, 41, 81].iter().map(|&n| d4_error(&grid(n, Scheme::FiniteDifference4))).collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 3.5, "observed order {rate} from {errs:?}");
    }
}

#[test]
fn cumulative_integral_matches_closed_form() {
    for (scheme, n, tol) in [(Scheme::Chebyshev, 32, 1e-13), (Scheme::FiniteDifference4, 201, 1e-9)] {
        let g = grid(n, scheme);
        let f: Vec<f64> = g.nodes.iter().map(|r| r.exp()).collect();
        let c = g.cumulative_integral(&f);
        for (i, r) in g.nodes.iter().enumerate() {
            assert!((c[i] - (r.exp() - 1f64.exp())).abs() <= tol, "{scheme:?} node {i}");
        }
    }
}

#[test]
fn interpolation_reproduces_smooth_functions() {
    let g = grid(40, Scheme::Chebyshev);
    let f: Vec<f64> = g.nodes.iter().map(|r| (3.0 * r).cos()).collect();
    for r in [1.0, 1.013, 1.5, 1.77, 2.0] {
        assert!((g.interpolate(&f, r) - (3.0 * r).cos()).abs() <= 1e-12);
    }
}

#[test]
fn trial_space_dimension_and_constraints() {
    let g = Arc::new(grid(8, Scheme::Chebyshev));
    let s = build_trial_space(&g).unwrap();
    assert_eq!(s.dim(), 5);
    for n in [8, 16, 64] {
        let g = Arc::new(grid(n, Scheme::Chebyshev));
        let s = build_trial_space(&g).unwrap();
        assert_eq!(s.dim(), n - 3);
        let dw = g.d1() * &s.basis;
        for j in 0..s.dim() {
            assert!(s.basis[(0, j)].abs() <= 1e-12);
            assert!(s.basis[(n - 1, j)].abs() <= 1e-12);
            assert!(dw[(n - 1, j)].abs() <= 1e-12, "n {n} column {j}: {}", dw[(n - 1, j)]);
        }
        let gram = s.basis.transpose() * &s.basis;
        let eye = nalgebra::DMatrix::<f64>::identity(n - 3, n - 3);
        assert!((gram - eye).amax() <= 1e-13);
    }
}

#[test]
fn trial_space_projector_is_idempotent() {
    let g = Arc::new(grid(32, Scheme::FiniteDifference4));
    let s = build_trial_space(&g).unwrap();
    let p = &s.basis * s.basis.transpose();
    assert!((&p * &p - &p).amax() <= 1e-10);
}

proptest! {
    #[test]
    fn random_combination_meets_boundary_conditions(coeffs in proptest::collection::vec(-1.0f64..1.0, 29)) {
        let g = Arc::new(grid(32, Scheme::Chebyshev));
        let s = build_trial_space(&g).unwrap();
        let w = s.expand(&DVector::from_vec(coeffs));
        let dw = g.d1() * &w;
        prop_assert!(w[0].abs() <= 1e-11);
        prop_assert!(w[31].abs() <= 1e-11);
        prop_assert!(dw[31].abs() <= 1e-11);
    }
}
