use std::sync::Arc;

use annulus_rti::dispersion::{assemble_forms, lambda0, sweep_k, DispersionPoint};
use annulus_rti::field2d::{divergence, VelocityField};
use annulus_rti::modes::{
    build_from_samples, build_mode, growth_envelope_check, mode_residual, robin_residual, superpose, superpose_with,
    ModeSet, RadialMode,
};
use annulus_rti::profiles::{hydrostatic_pressure, DensityProfile, PhysParams, SteadyState};
use annulus_rti::radial_ops::{build_grid, build_trial_space, Scheme};
use annulus_rti::Error;
use nalgebra::DVector;

fn tanh(n: usize) -> SteadyState {
    let p = PhysParams::baseline();
    let grid = Arc::new(build_grid(n, &p, Scheme::Chebyshev).unwrap());
    hydrostatic_pressure(&DensityProfile::tanh_layer(&p).unwrap(), &p, &grid).unwrap()
}

fn point(steady: &SteadyState, k: i64) -> DispersionPoint {
    let space = Arc::new(build_trial_space(&steady.grid).unwrap());
    lambda0(&assemble_forms(&space, steady, k.unsigned_abs() as f64).unwrap(), 1e-13).unwrap()
}

fn mode(steady: &SteadyState, k: i64) -> RadialMode {
    build_mode(k, &point(steady, k), steady, &steady.grid).unwrap()
}

#[test]
fn constructed_modes_meet_the_kinematic_constraints() {
    let steady = tanh(64);
    for k in [2, 5, 11] {
        let m = mode(&steady, k);
        assert!(m.divergence_defect() <= 1e-9, "k {k}: {}", m.divergence_defect());
        let n = steady.grid.n;
        assert_eq!(m.w1[0], 0.0);
        assert_eq!(m.w1[n - 1], 0.0);
        assert!(m.w2[n - 1].abs() <= 1e-10);
        let l2: f64 = steady.grid.integrate(&m.w1.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(l2 > 0.0);
        let res = mode_residual(&m, &steady, &steady.grid).unwrap();
        assert!(res.res_transport <= 1e-15);
        assert!(res.res2 <= 1e-13);
    }
}

#[test]
fn parity_in_the_wavenumber_is_exact() {
    let steady = tanh(48);
    let p = point(&steady, 4);
    let plus = build_mode(4, &p, &steady, &steady.grid).unwrap();
    let minus = build_mode(-4, &p, &steady, &steady.grid).unwrap();
    assert_eq!(plus.w1, minus.w1);
    assert_eq!(plus.h1, minus.h1);
    assert_eq!(plus.h2, minus.h2);
    assert_eq!(plus.w2, -minus.w2);
}

#[test]
fn constant_density_forced_through_gives_no_density_mode() {
    let p = PhysParams::baseline();
    let grid = Arc::new(build_grid(32, &p, Scheme::Chebyshev).unwrap());
    let steady = hydrostatic_pressure(&DensityProfile::constant(1.0, &p).unwrap(), &p, &grid).unwrap();
    let w = DVector::from_iterator(32, grid.nodes.iter().map(|r| (r - 1.0) * (r - 2.0).powi(2)));
    let m = build_from_samples(3, 0.5, w, &steady, &grid).unwrap();
    assert!(m.h2.iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_inputs_are_rejected() {
    let p = PhysParams::baseline();
    let grid = Arc::new(build_grid(32, &p, Scheme::Chebyshev).unwrap());
    let steady = hydrostatic_pressure(&DensityProfile::constant(1.0, &p).unwrap(), &p, &grid).unwrap();
    let stable = point(&steady, 3);
    assert!(stable.stable());
    assert!(matches!(build_mode(3, &stable, &steady, &grid), Err(Error::MissingGrowthRate)));
    let unstable = point(&tanh(32), 3);
    assert!(matches!(build_mode(0, &unstable, &steady, &grid), Err(Error::ZeroWavenumber)));
    let other = Arc::new(build_grid(40, &p, Scheme::Chebyshev).unwrap());
    assert!(matches!(build_mode(3, &unstable, &steady, &other), Err(Error::GridMismatch(_))));
}

#[test]
fn residuals_decay_spectrally_under_refinement() {
    let k = 11;
    let r48 = {
        let s = tanh(48);
        let m = mode(&s, k);
        (mode_residual(&m, &s, &s.grid).unwrap(), robin_residual(&m, &s))
    };
    let r64 = {
        let s = tanh(64);
        let m = mode(&s, k);
        (mode_residual(&m, &s, &s.grid).unwrap(), robin_residual(&m, &s))
    };
    let r128 = {
        let s = tanh(128);
        let m = mode(&s, k);
        (mode_residual(&m, &s, &s.grid).unwrap(), robin_residual(&m, &s))
    };
    assert!(r128.0.max() <= 1e-6, "{:?}", r128.0);
    assert!(r128.0.res1 < 1e-2 * r64.0.res1, "{:?} {:?}", r64.0, r128.0);
    assert!(r64.0.res1 < 1e-1 * r48.0.res1);
    assert!(r64.1 < 1e-1 * r48.1 && r128.1 < 1e-3 * r64.1, "{} {} {}", r48.1, r64.1, r128.1);
}

#[test]
fn superposition_reproduces_single_modes_and_zero() {
    let steady = tanh(40);
    let m = mode(&steady, 3);
    let set = ModeSet::new(vec![1.0], vec![m.clone()]).unwrap();
    let b = superpose(&set, 0.0).unwrap();
    for i in 0..40 {
        assert_eq!(b.vr.mode(3)[i].re, 0.5 * m.w1[i]);
        assert_eq!(b.vth.mode(3)[i].im, -0.5 * m.w2[i]);
        assert_eq!(b.vr.mode(-3)[i].re, 0.5 * m.w1[i]);
        // physical value v_r(r, 0) = w1
        assert!((b.vr.eval_at_node(i, 0.0) - m.w1[i]).abs() <= 1e-15);
        assert!((b.vth.eval_at_node(i, std::f64::consts::FRAC_PI_6) - m.w2[i]).abs() <= 1e-14);
    }
    let zero = ModeSet::new(vec![0.0], vec![m]).unwrap();
    let z = superpose(&zero, 1.0).unwrap();
    assert_eq!(z.vr.max_coeff() + z.vth.max_coeff() + z.p.max_coeff() + z.rho.max_coeff(), 0.0);
}

#[test]
fn superposed_fields_stay_solenoidal() {
    let steady = tanh(48);
    let modes: Vec<_> = (2..5).map(|k| mode(&steady, k)).collect();
    let set = ModeSet::new(vec![1.0, -0.5, 2.0], modes).unwrap();
    for t in [0.0, 0.5, 2.0] {
        let b = superpose_with(&set, t, 8).unwrap();
        let v = VelocityField::new(b.vr.clone(), b.vth.clone()).unwrap();
        let scale = v.vr.max_coeff();
        assert!(divergence(&v).unwrap().max_coeff() <= 1e-9 * scale.max(1.0));
        assert!(v.boundary_defect() <= 1e-10 * scale.max(1.0));
    }
    assert!(superpose_with(&set, 0.0, 3).is_err());
}

#[test]
fn envelope_bounds_hold_for_a_band() {
    let steady = tanh(48);
    let space = Arc::new(build_trial_space(&steady.grid).unwrap());
    let curve = sweep_k(&steady, &space, 24, 1e-12).unwrap();
    let lt = curve.lambda_tilde.unwrap();
    let set = ModeSet::from_curve(&curve, &steady, 2, 3, None).unwrap();
    assert!(set.lambda_min <= lt);
    for q in [0, 1] {
        let rep = growth_envelope_check(&set, &[0.0, 0.1], q, Some(lt)).unwrap();
        assert!(rep.max_violation <= 1e-9, "q {q}: {}", rep.max_violation);
        let (t, lo, x, hi) = rep.samples[1];
        assert_eq!(t, 0.1);
        assert!(lo < x && x < hi);
        let (_, lo0, x0, hi0) = rep.samples[0];
        assert!((lo0 - x0).abs() <= 1e-12 * x0 && (hi0 - x0).abs() <= 1e-12 * x0);
    }
}

#[test]
fn a_single_mode_makes_the_envelope_tight() {
    let steady = tanh(40);
    let set = ModeSet::new(vec![1.3], vec![mode(&steady, 6)]).unwrap();
    let times: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
    let rep = growth_envelope_check(&set, &times, 1, None).unwrap();
    for &(_, lo, x, hi) in &rep.samples {
        assert!((lo - x).abs() <= 1e-12 * x && (hi - x).abs() <= 1e-12 * x);
    }
}

#[test]
fn mode_sets_validate_their_band() {
    let steady = tanh(32);
    let (a, b) = (mode(&steady, 2), mode(&steady, 4));
    assert!(ModeSet::new(vec![1.0, 1.0], vec![a.clone(), b]).is_err());
    assert!(ModeSet::new(vec![1.0], vec![a.clone(), a]).is_err());
}

#[test]
fn modes_export_as_csv_and_json() {
    let steady = tanh(24);
    let m = mode(&steady, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mode_k3.csv");
    m.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,w1,w2,h1,h2"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(first[0], 1.0);
    assert_eq!(first[1], m.w1[0]);
    assert_eq!(text.lines().count(), 25);
    let meta = m.metadata();
    assert_eq!(meta["k"], 3);
    assert_eq!(meta["lambda0"].as_f64().unwrap(), m.lambda0);
}
