use std::sync::Arc;

use annulus_rti::field2d::{
    apply_operator, d_r_times, divergence, gradient, leray_project, read_snapshot, stokes_eigenpairs,
    stokes_estimate_ratio, stokes_residual, stokes_solve, vector_laplacian, write_lattice_csv, write_snapshot,
    CVector, FourierTransform, LerayProjector, Operator, OperatorInput, OperatorOutput, PolarField, VelocityField,
    Weight,
};
use annulus_rti::profiles::PhysParams;
use annulus_rti::radial_ops::{build_grid, RadialGrid, Scheme};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> Arc<RadialGrid> {
    Arc::new(build_grid(n, &PhysParams::baseline(), Scheme::Chebyshev).unwrap())
}

fn cmax(v: &CVector) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn nodal<F: Fn(f64) -> Complex64>(g: &RadialGrid, f: F) -> CVector {
    CVector::from_fn(g.n, |i, _| f(g.nodes[i]))
}

/// Smooth random field whose radial profiles are low-degree polynomials.
fn random_field(g: &Arc<RadialGrid>, kmax: usize, rng: &mut ChaCha8Rng) -> VelocityField {
    let mut v = VelocityField::zeros(g, kmax);
    for k in 0..=kmax as i64 {
        let mut comps = Vec::new();
        for _ in 0..2 {
            let coeffs: Vec<Complex64> =
                (0..6).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let damp = 1.0 / (1.0 + k as f64).powi(2);
            comps.push(nodal(g, |r| coeffs.iter().enumerate().map(|(j, a)| a * (r - 1.5).powi(j as i32)).sum::<Complex64>() * damp));
        }
        v.vr.set_mode(k, comps[0].clone());
        v.vth.set_mode(k, comps[1].clone());
    }
    v
}

#[test]
fn laplacian_of_zero_and_of_rigid_rotation() {
    let g = grid(24);
    let zero = VelocityField::zeros(&g, 3);
    let l = vector_laplacian(&zero).unwrap();
    assert_eq!(l.vr.max_coeff(), 0.0);
    assert_eq!(l.vth.max_coeff(), 0.0);
    let mut rot = VelocityField::zeros(&g, 3);
    rot.vth.set_mode(0, nodal(&g, c));
    let l = vector_laplacian(&rot).unwrap();
    assert!(l.vth.max_coeff() <= 1e-9 && l.vr.max_coeff() <= 1e-9);
}

#[test]
fn manufactured_laplacian_converges_spectrally() {
    // v_r = sin(2r) cos(theta), v_theta = 0
    let f = |r: f64| (2.0 * r).sin();
    let df = |r: f64| 2.0 * (2.0 * r).cos();
    let d2f = |r: f64| -4.0 * (2.0 * r).sin();
    let err = |n: usize| {
        let g = grid(n);
        let mut v = VelocityField::zeros(&g, 2);
        v.vr.set_mode(1, nodal(&g, |r| c(0.5 * f(r))));
        let l = vector_laplacian(&v).unwrap();
        let ex_r = nodal(&g, |r| c(0.5 * (d2f(r) + df(r) / r - 2.0 * f(r) / (r * r))));
        // -(2/r^2) d_theta of nothing; the theta line picks up (2/r^2) d_theta v_r = -(2/r^2) f sin(theta)
        let ex_t = nodal(&g, |r| Complex64::new(0.0, 1.0) * (f(r) / (r * r)));
        cmax(&(l.vr.mode(1) - ex_r)).max(cmax(&(l.vth.mode(1) - ex_t)))
    };
    let (e8, e16, e24) = (err(8), err(16), err(24));
    assert!(e16 < 1e-4 * e8, "{e8} {e16}");
    assert!(e24 < 1e-9, "{e24}");
}

#[test]
fn operator_dispatch() {
    let g = grid(12);
    let p = PolarField::from_fn(&g, 2, |r, t| r * t.cos());
    match apply_operator(Operator::Grad, OperatorInput::Scalar(&p)).unwrap() {
        OperatorOutput::Vector(v) => {
            // grad(r cos) = (cos, -sin)
            assert!((v.vr.mode(1)[3] - c(0.5)).norm() <= 1e-12);
            assert!((v.vth.mode(1)[3] - Complex64::new(0.0, 0.5)).norm() <= 1e-12);
        }
        _ => panic!("expected a vector"),
    }
    assert!(apply_operator(Operator::Div, OperatorInput::Scalar(&p)).is_err());
    assert_eq!(Operator::parse("vector_laplacian").unwrap(), Operator::VectorLaplacian);
    assert!(Operator::parse("curl").is_err());
}

#[test]
fn physical_round_trip() {
    let g = grid(10);
    let f = PolarField::from_fn(&g, 5, |r, t| r * (3.0 * t).sin() + (r * t.cos()).exp() * 0.0 + 2.0 * (t - 0.3).cos());
    let tf = FourierTransform::new(16);
    let back = PolarField::from_physical(&g, 5, &f.to_physical(&tf), &tf);
    assert!(back.sub(&f).unwrap().max_coeff() <= 1e-14);
    assert!(f.reality_defect() <= 1e-15);
    assert!((f.eval_at_node(4, 0.7) - (g.nodes[4] * (2.1f64).sin() + 2.0 * (0.4f64).cos())).abs() <= 1e-13);
}

fn solenoidal(g: &Arc<RadialGrid>, kmax: usize) -> VelocityField {
    let mut v = VelocityField::zeros(g, kmax);
    for k in 1..=kmax as i64 {
        let a = nodal(g, |r| c((r - 1.0) * (r - 2.0) * (r + k as f64).exp() * 1e-2));
        let b = d_r_times(g, &a) * Complex64::new(0.0, 1.0 / k as f64);
        v.vr.set_mode(k, a);
        v.vth.set_mode(k, b);
    }
    v.vth.set_mode(0, nodal(g, |r| c(r.sin())));
    v
}

#[test]
fn leray_leaves_solenoidal_fields_alone() {
    let g = grid(32);
    let v = solenoidal(&g, 4);
    assert!(v.divergence_defect() <= 1e-12);
    let (pv, p) = leray_project(&v).unwrap();
    assert!(pv.sub(&v).unwrap().norm(Weight::Radius) <= 1e-10 * v.norm(Weight::Radius));
    let gp = gradient(&p);
    assert!(gp.norm(Weight::Radius) <= 1e-10 * v.norm(Weight::Radius));
}

#[test]
fn leray_annihilates_gradients() {
    let g = grid(32);
    let q = PolarField::from_fn(&g, 4, |r, t| (r * r).cos() * (2.0 * t).cos() + r.exp() * t.sin() + r.powi(3) + (r * (3.0 * t).sin()));
    let f = gradient(&q);
    let (pf, p) = leray_project(&f).unwrap();
    assert!(pf.norm(Weight::Radius) <= 1e-10 * f.norm(Weight::Radius), "{}", pf.norm(Weight::Radius));
    // the Neumann pressure recovers the potential
    let diff = gradient(&p).sub(&f).unwrap();
    assert!(diff.norm(Weight::Radius) <= 1e-10 * f.norm(Weight::Radius));
}

#[test]
fn leray_is_an_orthogonal_projection() {
    let g = grid(32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let proj = LerayProjector::new(&g, 6).unwrap();
    for _ in 0..10 {
        let f = random_field(&g, 6, &mut rng);
        let (pf, _) = proj.project(&f).unwrap();
        let (ppf, _) = proj.project(&pf).unwrap();
        let nf = f.norm(Weight::Radius);
        assert!(ppf.sub(&pf).unwrap().norm(Weight::Radius) <= 1e-12 * nf);
        assert!(pf.norm(Weight::Radius) <= (1.0 + 1e-10) * nf);
        assert!(pf.divergence_defect() <= 1e-10);
        assert!(pf.radial_flux().abs() <= 1e-9);
        for k in pf.vr.wavenumbers() {
            assert!(pf.vr.mode(k)[0].norm() <= 1e-14 && pf.vr.mode(k)[31].norm() <= 1e-14);
        }
        // residual is orthogonal to the range
        let res = f.sub(&pf).unwrap();
        assert!(res.inner(&pf, Weight::Radius).unwrap().abs() <= 1e-11 * nf * nf);
    }
}

#[test]
fn leray_commutes_with_rotation() {
    let g = grid(20);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = random_field(&g, 5, &mut rng);
    let (a, _) = leray_project(&f.rotate(0.77)).unwrap();
    let (b, _) = leray_project(&f).unwrap();
    let b = b.rotate(0.77);
    assert!(a.sub(&b).unwrap().norm(Weight::Radius) <= 1e-12 * f.norm(Weight::Radius));
}

/// Polynomials as ascending coefficient lists.
#[derive(Clone)]
struct Poly(Vec<f64>);

impl Poly {
    fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, a| acc * x + a)
    }
    fn deriv(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(j, a)| j as f64 * a).collect())
    }
    fn mul(&self, o: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }
}

#[test]
fn stokes_recovers_manufactured_solutions() {
    for alpha in [0.0, 0.004] {
        let params = PhysParams::new(1.0, 2.0, 0.01, 1.0, alpha).unwrap();
        let mu = params.mu;
        let robin = 1.0 - alpha / mu;
        let g = Arc::new(build_grid(40, &params, Scheme::Chebyshev).unwrap());
        let ii = Complex64::new(0.0, 1.0);
        let mut f = VelocityField::zeros(&g, 3);
        let mut exact = VelocityField::zeros(&g, 3);
        let mut exact_p = PolarField::zeros(&g, 3);
        for k in 1..=3i64 {
            let kf = k as f64;
            // a = (r-1)(r-2)^2 (1 + c(r-1)) meets every wall condition once c = 1 + robin/2
            let cc = 1.0 + robin / 2.0;
            let a = Poly(vec![-1.0, 1.0]).mul(&Poly(vec![4.0, -4.0, 1.0])).mul(&Poly(vec![1.0 - cc, cc]));
            let ra = a.mul(&Poly(vec![0.0, 1.0]));
            let bq = ra.deriv(); // b = i D(ra)/k
            let (da, d2a) = (a.deriv(), a.deriv().deriv());
            let (db, d2b) = (bq.deriv(), bq.deriv().deriv());
            let p = |r: f64| (r * kf).cos();
            let dp = |r: f64| -kf * (r * kf).sin();
            let f1 = nodal(&g, |r| {
                let b = ii * bq.eval(r) / kf;
                let la = d2a.eval(r) + da.eval(r) / r - (kf * kf + 1.0) / (r * r) * a.eval(r);
                c(mu) * (c(la) - ii * (2.0 * kf) * b / (r * r)) - c(dp(r))
            });
            let f2 = nodal(&g, |r| {
                let lb = ii * (d2b.eval(r) + db.eval(r) / r - (kf * kf + 1.0) / (r * r) * bq.eval(r)) / kf;
                c(mu) * (lb + ii * (2.0 * kf) * a.eval(r) / (r * r)) - ii * kf * p(r) / r
            });
            f.vr.set_mode(k, f1);
            f.vth.set_mode(k, f2);
            exact.vr.set_mode(k, nodal(&g, |r| c(a.eval(r))));
            exact.vth.set_mode(k, nodal(&g, |r| ii * bq.eval(r) / kf));
            exact_p.set_mode(k, nodal(&g, |r| c(p(r))));
        }
        // axisymmetric part: b = (r-2)(1 + c(r-1)) with c = 1 + robin, p = cos r
        let cc = 1.0 + robin;
        let b0 = Poly(vec![-2.0, 1.0]).mul(&Poly(vec![1.0 - cc, cc]));
        let (db0, d2b0) = (b0.deriv(), b0.deriv().deriv());
        f.vth.set_mode(0, nodal(&g, |r| c(mu * (d2b0.eval(r) + db0.eval(r) / r - b0.eval(r) / (r * r)))));
        f.vr.set_mode(0, nodal(&g, |r| c(r.sin())));
        exact.vth.set_mode(0, nodal(&g, |r| c(b0.eval(r))));
        let (v, p) = stokes_solve(&f, &params).unwrap();
        let err = v.sub(&exact).unwrap();
        assert!(err.vr.max_coeff() <= 1e-8 && err.vth.max_coeff() <= 1e-8, "alpha {alpha}: {} {}", err.vr.max_coeff(), err.vth.max_coeff());
        for k in 1..=3 {
            assert!(cmax(&(p.mode(k) - exact_p.mode(k))) <= 1e-8);
        }
        let gp0 = p.dr();
        assert!(cmax(&(gp0.mode(0) + f.vr.mode(0))) <= 1e-8);
        let (r1, r2, rd) = stokes_residual(&v, &p, &f, mu).unwrap();
        assert!(r1 <= 1e-8 && r2 <= 1e-8 && rd <= 1e-8, "{r1} {r2} {rd}");
        assert!(v.boundary_defect() <= 1e-10);
        assert!(v.robin_defect(&params) <= 1e-8);
    }
}

#[test]
fn stokes_with_zero_forcing_is_trivial() {
    let g = grid(16);
    let (v, p) = stokes_solve(&VelocityField::zeros(&g, 3), &PhysParams::baseline()).unwrap();
    assert_eq!(v.vr.max_coeff() + v.vth.max_coeff(), 0.0);
    assert!(gradient(&p).vr.max_coeff() == 0.0);
}

#[test]
fn stokes_estimate_ratio_is_stable_under_refinement() {
    let params = PhysParams::baseline();
    let worst = |n: usize| {
        let g = grid(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let f = random_field(&g, 4, &mut rng);
            let (v, p) = stokes_solve(&f, &params).unwrap();
            let ratio = stokes_estimate_ratio(&v, &p, &f);
            assert!(ratio.is_finite() && ratio > 0.0);
            worst = worst.max(ratio);
        }
        worst
    };
    let (a, b) = (worst(32), worst(64));
    assert!((a - b).abs() <= 0.1 * b, "{a} {b}");
}

#[test]
fn stokes_eigenpairs_are_positive_ordered_and_orthonormal() {
    let g = grid(32);
    let params = PhysParams::baseline();
    let pairs = stokes_eigenpairs(&g, &params, 40).unwrap();
    assert_eq!(pairs.len(), 40);
    assert!(pairs[0].beta > 0.0);
    for w in pairs.windows(2) {
        assert!(w[1].beta >= w[0].beta);
    }
    assert!(pairs[39].beta > pairs[9].beta);
    for i in 0..pairs.len() {
        for j in i..pairs.len() {
            let ip = pairs[i].field.inner(&pairs[j].field, Weight::Radius).unwrap();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((ip - expect).abs() <= 1e-10, "({i}, {j}): {ip}");
        }
        let e = &pairs[i].field;
        assert!(e.divergence_defect() <= 1e-10);
        assert!(e.boundary_defect() <= 1e-10);
    }
    // each eigenfield solves the Stokes problem with forcing -beta e
    for pair in pairs.iter().take(6) {
        let (v, _) = stokes_solve(&pair.field.scale(-pair.beta), &params).unwrap();
        let d = v.sub(&pair.field).unwrap().norm(Weight::Radius);
        assert!(d <= 1e-6, "k {}: {d}", pair.k);
    }
}

#[test]
fn snapshot_round_trip_and_lattice_export() {
    let g = grid(12);
    let a = PolarField::from_fn(&g, 3, |r, t| r * t.cos());
    let b = PolarField::from_fn(&g, 3, |r, t| r * r * (2.0 * t).sin());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.annf");
    write_snapshot(&path, 1.25, &[("vr", &a), ("vth", &b)]).unwrap();
    let snap = read_snapshot(&path).unwrap();
    assert_eq!((snap.n, snap.kmax, snap.time), (12, 3, 1.25));
    assert_eq!(snap.tags, vec!["vr".to_string(), "vth".to_string()]);
    let back = snap.field("vth", &g).unwrap();
    assert_eq!(back.sub(&b).unwrap().max_coeff(), 0.0);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[0..5], b"ANNF1");
    let csv_path = dir.path().join("lattice.csv");
    write_lattice_csv(&csv_path, 8, &[("vr", &a), ("vth", &b)]).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 12 * 8);
    assert!(text.starts_with("r,theta,vr,vth"));
}

#[test]
fn divergence_of_gradient_field_matches_laplacian_identity() {
    // div(r grad q) with our divergence is r * (scalar Laplacian of q)
    let g = grid(28);
    let q = PolarField::from_fn(&g, 3, |r, t| r.powi(3) * (2.0 * t).cos());
    let gq = gradient(&q);
    let d = divergence(&gq).unwrap();
    // (r q_r)_r + q_tt / r with q = r^3 cos 2t: 9 r^2 cos 2t - 4 r^2 cos 2t
    let exact = PolarField::from_fn(&g, 3, |r, t| 5.0 * r * r * (2.0 * t).cos());
    let e = d.sub(&exact).unwrap().max_coeff();
    assert!(e <= 1e-10 * exact.max_coeff(), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_is_idempotent_for_random_fields(seed in 0u64..1000) {
        let g = grid(24);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_field(&g, 4, &mut rng);
        let (pf, _) = leray_project(&f).unwrap();
        let (ppf, _) = leray_project(&pf).unwrap();
        prop_assert!(ppf.sub(&pf).unwrap().norm(Weight::Radius) <= 1e-12 * f.norm(Weight::Radius));
        prop_assert!(pf.norm(Weight::Radius) <= (1.0 + 1e-10) * f.norm(Weight::Radius));
    }
}
