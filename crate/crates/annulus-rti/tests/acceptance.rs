//! End-to-end acceptance checks, one test per criterion. Each prints a
//! `criterion N: PASS|FAIL` line before asserting.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use annulus_rti::cli::{run_command, Command, RunConfig};
use annulus_rti::dispersion::{assemble_forms, lambda0, max_growth_2d, phi, sweep_k, PhiEvaluator};
use annulus_rti::evolve::{init_from_mode, measure_growth, run, Dynamics, Evolver, SimConfig};
use annulus_rti::field2d::{gradient, stokes_eigenpairs, stokes_solve, vector_laplacian, LerayProjector, PolarField, VelocityField, Weight};
use annulus_rti::modes::{build_mode, growth_envelope_check, mode_residual, robin_residual, ModeSet};
use annulus_rti::profiles::{hydrostatic_pressure, DensityProfile, PhysParams, SteadyState};
use annulus_rti::radial_ops::{build_grid, build_trial_space, Scheme, TrialSpace};
use annulus_rti::verify::{check_inequality, estimate_constant, FieldSpace, Harness, LEMMAS};

fn setup(n: usize, params: PhysParams, profile: Option<DensityProfile>) -> (SteadyState, Arc<TrialSpace>) {
    let grid = Arc::new(build_grid(n, &params, Scheme::Chebyshev).unwrap());
    let profile = profile.unwrap_or_else(|| DensityProfile::tanh_layer(&params).unwrap());
    let steady = hydrostatic_pressure(&profile, &params, &grid).unwrap();
    let space = Arc::new(build_trial_space(&grid).unwrap());
    (steady, space)
}

fn verdict(n: &str, pass: bool, detail: &str) {
    println!("criterion {n}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn criterion_01_stability_certificate() {
    let start = Instant::now();
    let p = PhysParams::baseline();
    let (steady, space) = setup(64, p, Some(DensityProfile::constant(1.0, &p).unwrap()));
    let curve = sweep_k(&steady, &space, 32, 1e-10).unwrap();
    let mut min_phi = f64::INFINITY;
    for k in 1..=32 {
        let eval = PhiEvaluator::new(&assemble_forms(&space, &steady, k as f64).unwrap()).unwrap();
        for i in 0..=20 {
            min_phi = min_phi.min(eval.phi(0.25 * i as f64).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let stable = curve.points.iter().all(|p| p.stable()) && curve.lambda_tilde.is_none();
    let pass = stable && min_phi >= 0.0 && secs < 10.0;
    verdict("1", pass, &format!("all stable = {stable}, min phi = {min_phi:.3e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_02_uniqueness_bracket() {
    let p = PhysParams::baseline();
    let (steady, space) = setup(64, p, None);
    let curve = sweep_k(&steady, &space, 32, 1e-10).unwrap();
    let mut margin = f64::INFINITY;
    let mut unstable = 0;
    for pt in &curve.points {
        if let Some(l) = pt.lambda0 {
            unstable += 1;
            margin = margin.min(l.min(pt.lambda_c - l).min(pt.lambda_upper - pt.lambda_c));
        }
    }
    let b1 = curve.point(1).unwrap().lambda_upper;
    let b2 = curve.point(2).unwrap().lambda_upper;
    let pass = unstable > 0 && margin >= 1e-6 && (b1 - 1000.0 / 3.0).abs() <= 1e-9 && (b2 - 8000.0 / 27.0).abs() <= 1e-9;
    verdict("2", pass, &format!("{unstable} unstable k, smallest margin {margin:.3e}, bounds {b1:.6} {b2:.6}"));
    assert!(pass);
}

#[test]
fn criterion_03_monotone_phi_and_fixed_point() {
    let p = PhysParams::baseline();
    let (steady, space) = setup(64, p, None);
    let mut worst_back = 0.0f64;
    let mut worst_res = 0.0f64;
    for k in 1..=32 {
        let forms = assemble_forms(&space, &steady, k as f64).unwrap();
        let eval = PhiEvaluator::new(&forms).unwrap();
        let pt = lambda0(&forms, 1e-12).unwrap();
        let top = pt.lambda_c.max(1.0) * 1.5;
        let vals: Vec<f64> = (0..20).map(|i| eval.phi(top * i as f64 / 19.0).unwrap()).collect();
        for w in vals.windows(2) {
            worst_back = worst_back.max(w[0] - w[1]);
        }
        if let Some(l) = pt.lambda0 {
            worst_res = worst_res.max((l * l + phi(l, &forms).unwrap()).abs());
        }
    }
    let pass = worst_back <= 1e-10 && worst_res <= 1e-10;
    verdict("3", pass, &format!("largest backward step {worst_back:.3e}, largest |l^2 + phi(l)| {worst_res:.3e}"));
    assert!(pass);
}

#[test]
fn criterion_04_grid_convergence() {
    let start = Instant::now();
    let p = PhysParams::baseline();
    let at = |n: usize| {
        let (steady, space) = setup(n, p, None);
        lambda0(&assemble_forms(&space, &steady, 3.0).unwrap(), 1e-13).unwrap().lambda0.unwrap()
    };
    let (a, b) = (at(128), at(256));
    let secs = start.elapsed().as_secs_f64();
    let change = rel(a, b);
    let pass = change < 1e-6 && secs < 60.0;
    verdict("4", pass, &format!("lambda0(3) = {a:.12} / {b:.12}, change {change:.3e}, {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_05_mode_consistency() {
    let p = PhysParams::baseline();
    let mut res = Vec::new();
    let mut robin = Vec::new();
    for n in [64, 128, 256] {
        let (steady, space) = setup(n, p, None);
        let pt = lambda0(&assemble_forms(&space, &steady, 11.0).unwrap(), 1e-13).unwrap();
        let m = build_mode(11, &pt, &steady, &steady.grid).unwrap();
        res.push(mode_residual(&m, &steady, &steady.grid).unwrap().max());
        robin.push(robin_residual(&m, &steady));
    }
    let decaying = res[1] < res[0] && robin[1] < robin[0];
    let pass = res[2] <= 1e-7 && decaying && robin[2] < robin[0];
    verdict(
        "5",
        pass,
        &format!("residual n=64/128/256: {:.2e} {:.2e} {:.2e}; slip residual {:.2e} {:.2e} {:.2e}", res[0], res[1], res[2], robin[0], robin[1], robin[2]),
    );
    assert!(pass);
}

fn linear_rate(steady: &SteadyState, set: &ModeSet, kmax: usize, dt: f64) -> (f64, f64) {
    let lam = set.modes[0].lambda0;
    let t_end = 1000f64.ln() / lam;
    let cfg = SimConfig { dt, t_final: t_end, ..SimConfig::default() };
    let init = init_from_mode(set, 1e-6, kmax, steady).unwrap();
    let mut ev = Evolver::new(Dynamics::Linear, steady, &init, &cfg).unwrap();
    let out = run(&mut ev, &cfg, |_, _| Ok(())).unwrap();
    let t: Vec<f64> = out.diagnostics.iter().map(|r| r.t).collect();
    let y: Vec<f64> = out.diagnostics.iter().map(|r| r.vr_l2).collect();
    let growth = y.last().unwrap() / y[0];
    (measure_growth(&t, &y, (0.0, t_end)).unwrap().0, growth)
}

#[test]
fn criterion_06_linear_evolver() {
    let start = Instant::now();
    let p = PhysParams::baseline();
    let (steady, space) = setup(128, p, None);
    let curve = sweep_k(&steady, &space, 32, 1e-12).unwrap();
    let k = curve.k_star.unwrap();
    let set = ModeSet::from_curve(&curve, &steady, k, 1, None).unwrap();
    let lam = set.modes[0].lambda0;
    let (r1, growth) = linear_rate(&steady, &set, 32, 0.01);
    let (r2, _) = linear_rate(&steady, &set, 32, 0.005);
    let secs = start.elapsed().as_secs_f64();
    let pass = rel(r2, lam) <= 0.01 && rel(r1, r2) <= 1e-3 && growth >= 1e3 * 0.99 && secs < 300.0;
    verdict(
        "6",
        pass,
        &format!("k* = {k}, lambda0 = {lam:.10}, rate(dt) = {r1:.10}, rate(dt/2) = {r2:.10}, growth {growth:.1}x, {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_nonlinear_linear_regime() {
    let p = PhysParams::baseline();
    let (steady, space) = setup(64, p, None);
    let curve = sweep_k(&steady, &space, 32, 1e-12).unwrap();
    let set = ModeSet::from_curve(&curve, &steady, curve.k_star.unwrap(), 1, None).unwrap();
    let lam = set.modes[0].lambda0;
    let t_end = 1000f64.ln() / lam;
    let cfg = SimConfig { dt: 0.01, t_final: t_end, vr_stop: Some(1e-3), ..SimConfig::default() };
    let init = init_from_mode(&set, 1e-6, 16, &steady).unwrap();
    let mut ev = Evolver::new(Dynamics::Nonlinear, &steady, &init, &cfg).unwrap();
    let delta = ev.delta;
    let out = run(&mut ev, &cfg, |_, _| Ok(())).unwrap();
    let rows = &out.diagnostics;
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.vr_l2).collect();
    let rate = measure_growth(&t, &y, (0.0, *t.last().unwrap())).unwrap().0;
    let span = t.last().unwrap() - t[0];
    let drift = rel(rows.last().unwrap().rho_q[0], rows[0].rho_q[0]) / span;
    let min = rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min);
    let max_vr = y.iter().cloned().fold(0.0, f64::max);
    let pass = rel(rate, lam) <= 0.05 && drift <= 1e-6 && min >= delta && max_vr <= 1e-3;
    verdict(
        "7",
        pass,
        &format!("rate {rate:.8} vs {lam:.8}, density-norm drift {drift:.2e}/time, min density {min:.6} >= {delta:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_planar_versus_discrete_growth() {
    let p = PhysParams::baseline();
    let (steady, space) = setup(64, p, None);
    let lt = sweep_k(&steady, &space, 32, 1e-12).unwrap().lambda_tilde.unwrap();
    let ltt = max_growth_2d(&steady, &space, 32).unwrap().lambda_tilde_tilde;
    let dominates = ltt >= lt - 1e-8;
    let equal = rel(ltt, lt) <= 1e-6;
    let pass = dominates && equal;
    verdict(
        "8",
        pass,
        &format!("LambdaTilde = {lt:.10}, LambdaTildeTilde = {ltt:.10}; dominance {dominates}, equality to 1e-6 {equal}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_leray_and_stokes() {
    let p = PhysParams::baseline();
    let grid = Arc::new(build_grid(32, &p, Scheme::Chebyshev).unwrap());
    let proj = LerayProjector::new(&grid, 6).unwrap();
    let mut idem = 0.0f64;
    let mut expand = 0.0f64;
    for seed in 0..20u64 {
        let f = VelocityField {
            vr: PolarField::from_fn(&grid, 6, |r, t| (r * (seed as f64 + 1.0)).sin() * (t + 0.1 * seed as f64).cos() + r * r * (3.0 * t).sin()),
            vth: PolarField::from_fn(&grid, 6, |r, t| (r - seed as f64 * 0.05).exp() * (2.0 * t).sin() + (5.0 * t).cos() / r),
        };
        let (pf, _) = proj.project(&f).unwrap();
        let (ppf, _) = proj.project(&pf).unwrap();
        let nf = f.norm(Weight::Radius);
        idem = idem.max(ppf.sub(&pf).unwrap().norm(Weight::Radius) / nf);
        expand = expand.max(pf.norm(Weight::Radius) / nf - 1.0);
    }
    // manufactured solutions in the slip space
    let mut stokes_err = 0.0f64;
    for alpha in [0.0, 0.004] {
        let params = PhysParams { alpha, ..p };
        let h = Harness::new(&grid, 4, &params).unwrap();
        for seed in 0..3 {
            let v = h.random_field(seed, FieldSpace::V12).unwrap();
            let q = PolarField::from_fn(&grid, 4, |r, t| r * r * (2.0 * t).cos() + r.sin() * t.sin());
            let lap = vector_laplacian(&v).unwrap();
            let gq = gradient(&q);
            let f = VelocityField { vr: lap.vr.scale(p.mu).sub(&gq.vr).unwrap(), vth: lap.vth.scale(p.mu).sub(&gq.vth).unwrap() };
            let (u, _) = stokes_solve(&f, &params).unwrap();
            let scale = v.vr.max_coeff().max(v.vth.max_coeff());
            let d = u.sub(&v).unwrap();
            stokes_err = stokes_err.max(d.vr.max_coeff().max(d.vth.max_coeff()) / scale);
        }
    }
    let pairs = stokes_eigenpairs(&grid, &p, 30).unwrap();
    let positive = pairs[0].beta > 0.0 && pairs.windows(2).all(|w| w[1].beta >= w[0].beta);
    let mut ortho = 0.0f64;
    for i in 0..pairs.len() {
        for j in i..pairs.len() {
            let ip = pairs[i].field.inner(&pairs[j].field, Weight::Radius).unwrap();
            ortho = ortho.max((ip - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let pass = idem <= 1e-12 && expand <= 1e-10 && stokes_err <= 1e-8 && positive && ortho <= 1e-10;
    verdict(
        "9",
        pass,
        &format!("idempotence {idem:.2e}, expansion {expand:.2e}, Stokes error {stokes_err:.2e}, eigen order {positive}, orthonormality {ortho:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_inequality_harness() {
    let start = Instant::now();
    let p = PhysParams::baseline();
    let grid = Arc::new(build_grid(64, &p, Scheme::Chebyshev).unwrap());
    let mut violations = 0;
    let mut summary = Vec::new();
    for alpha in [0.0, p.mu / p.r1] {
        let h = Harness::new(&grid, 16, &PhysParams { alpha, ..p }).unwrap();
        for id in LEMMAS {
            let r = check_inequality(id, 1000, 2024, &h).unwrap();
            violations += r.violations;
            summary.push(format!("{id}@{alpha}: {:.4}", r.worst_ratio));
        }
    }
    let h = Harness::new(&grid, 16, &p).unwrap();
    let c = estimate_constant("poincare_vr", 200, 200, 7, &h).unwrap();
    let secs = start.elapsed().as_secs_f64();
    println!("  worst ratios: {}", summary.join(", "));
    let pass = violations == 0 && c <= 1.0 && secs < 300.0;
    verdict("10", pass, &format!("{violations} violations in 14000 trials, Poincare constant {c:.6} <= 1, {secs:.1} s"));
    assert!(pass);
}

#[test]
fn criterion_11_parity_and_superposition() {
    let p = PhysParams::baseline();
    let (steady, space) = setup(48, p, None);
    let mut parity = 0.0f64;
    for k in 1..=20 {
        let a = lambda0(&assemble_forms(&space, &steady, k as f64).unwrap(), 1e-12).unwrap().lambda0;
        let b = lambda0(&assemble_forms(&space, &steady, -(k as f64)).unwrap(), 1e-12).unwrap().lambda0;
        if let (Some(a), Some(b)) = (a, b) {
            parity = parity.max((a - b).abs());
        } else {
            parity = parity.max(if a.is_some() == b.is_some() { 0.0 } else { 1.0 });
        }
    }
    let curve = sweep_k(&steady, &space, 24, 1e-12).unwrap();
    let lt = curve.lambda_tilde.unwrap();
    let set = ModeSet::from_curve(&curve, &steady, 2, 4, Some(vec![1.0, -0.7, 0.4, 1.3])).unwrap();
    let times: Vec<f64> = (0..10).map(|i| 0.4 * i as f64).collect();
    let mut violation = 0.0f64;
    for q in 0..=2 {
        violation = violation.max(growth_envelope_check(&set, &times, q, Some(lt)).unwrap().max_violation);
    }
    let pass = parity <= 1e-14 && violation <= 1e-9;
    verdict("11", pass, &format!("parity gap {parity:.2e}, envelope violation {violation:.2e}"));
    assert!(pass);
}

fn collect_csvs(dir: &Path, out: &mut Vec<(String, Vec<u8>)>, root: &Path) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_csvs(&p, out, root);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
}

#[test]
fn criterion_12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b"]
        .iter()
        .map(|name| {
            let mut cfg = RunConfig::from_toml(
                "seed = 3\n[grid]\nn = 48\nkmax = 14\n[sim]\nt_linear = 2.0\nt_nonlinear = 1.0\n[verify]\ntrials = 30\n",
            )
            .unwrap();
            let out = dir.path().join(name);
            cfg.output.dir = out.clone();
            run_command(Command::Pipeline, cfg.clone()).unwrap();
            run_command(Command::Verify, cfg).unwrap();
            let mut files = Vec::new();
            collect_csvs(&out, &mut files, &out);
            files
        })
        .collect();
    let same = runs[0] == runs[1] && !runs[0].is_empty();
    verdict("12", same, &format!("{} CSV files compared", runs[0].len()));
    assert!(same);
}
