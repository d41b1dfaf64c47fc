//! Batch front end: typed run configuration and the subcommand drivers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dispersion::{max_growth_2d, refine_continuous, sweep_k, DispersionCurve, FormCores, MaxGrowth2d};
use crate::error::{Error, Result};
use crate::evolve::{
    escape_time, init_from_mode, lipschitz_time, measure_growth, run as run_sim, DiagRow, Dynamics, Evolver, SimConfig,
    TimeScheme,
};
use crate::field2d::{fmt17, write_lattice_csv, write_snapshot};
use crate::modes::{mode_residual, robin_residual, ModeSet};
use crate::profiles::{hydrostatic_pressure, DensityProfile, PhysParams, ProfileKind, SteadyState};
use crate::radial_ops::{build_grid, build_trial_space, Scheme, TrialSpace};
use crate::verify::{check_inequality, estimate_bounds, write_verify_csv, CheckResult, Harness, LEMMAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Dispersion,
    Modes,
    EvolveLinear,
    EvolveNonlinear,
    Verify,
    Pipeline,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSpec {
    #[serde(default = "d_r1")]
    pub r1: f64,
    #[serde(default = "d_r2")]
    pub r2: f64,
    #[serde(default = "d_mu")]
    pub mu: f64,
    #[serde(default = "d_g")]
    pub g: f64,
    #[serde(default)]
    pub alpha: f64,
}

fn d_r1() -> f64 {
    1.0
}
fn d_r2() -> f64 {
    2.0
}
fn d_mu() -> f64 {
    0.01
}
fn d_g() -> f64 {
    1.0
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        Self { r1: 1.0, r2: 2.0, mu: 0.01, g: 1.0, alpha: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// constant, linear, tanh-layer, polynomial or tabulated.
    pub kind: String,
    pub rho0: Option<f64>,
    pub slope: Option<f64>,
    pub base: Option<f64>,
    pub amp: Option<f64>,
    pub center: Option<f64>,
    pub width: Option<f64>,
    pub coeffs: Option<Vec<f64>>,
    /// Two-column `r,rho` table for the tabulated kind.
    pub path: Option<PathBuf>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            kind: "tanh-layer".into(),
            rho0: None,
            slope: None,
            base: None,
            amp: None,
            center: None,
            width: None,
            coeffs: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "d_n")]
    pub n: usize,
    /// Fourier truncation `K` of the 2D fields.
    #[serde(default = "d_kmax")]
    pub kmax: usize,
    #[serde(default = "d_scheme")]
    pub scheme: String,
}

fn d_n() -> usize {
    64
}
fn d_kmax() -> usize {
    16
}
fn d_scheme() -> String {
    "chebyshev".into()
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n: 64, kmax: 16, scheme: d_scheme() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionSpec {
    #[serde(default = "d_kmax_sweep")]
    pub k_max: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
}

fn d_kmax_sweep() -> usize {
    32
}
fn d_tol() -> f64 {
    1e-10
}

impl Default for DispersionSpec {
    fn default() -> Self {
        Self { k_max: 32, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSpec {
    /// First wavenumber of the band; the most unstable one when absent.
    pub j: Option<i64>,
    #[serde(default = "d_one")]
    pub count: usize,
    pub coeffs: Option<Vec<f64>>,
}

fn d_one() -> usize {
    1
}

impl Default for ModesSpec {
    fn default() -> Self {
        Self { j: None, count: 1, coeffs: None }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Linear run length; by default long enough for a thousandfold growth.
    pub t_linear: Option<f64>,
    pub t_nonlinear: Option<f64>,
    #[serde(default = "d_scheme_t")]
    pub scheme: String,
    #[serde(default = "d_amp")]
    pub amplitude: f64,
    #[serde(default = "d_cfl")]
    pub cfl_cap: f64,
    #[serde(default = "d_q")]
    pub q_list: Vec<f64>,
    #[serde(default = "d_one")]
    pub sample_every: usize,
    /// Snapshot cadence in steps; none when zero.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "d_vr_stop")]
    pub vr_stop: f64,
    /// Constants of the closed-form instability times.
    #[serde(default = "d_one_f")]
    pub lipschitz_k: f64,
    #[serde(default = "d_eps0")]
    pub eps0: f64,
}

fn d_dt() -> f64 {
    0.01
}
fn d_scheme_t() -> String {
    "imex-cn-ab2".into()
}
fn d_amp() -> f64 {
    1e-6
}
fn d_cfl() -> f64 {
    0.5
}
fn d_q() -> Vec<f64> {
    vec![2.0, 4.0]
}
fn d_vr_stop() -> f64 {
    1e-3
}
fn d_one_f() -> f64 {
    1.0
}
fn d_eps0() -> f64 {
    1e-2
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            dt: d_dt(),
            t_linear: None,
            t_nonlinear: None,
            scheme: d_scheme_t(),
            amplitude: d_amp(),
            cfl_cap: d_cfl(),
            q_list: d_q(),
            sample_every: 1,
            snapshot_every: 0,
            vr_stop: d_vr_stop(),
            lipschitz_k: 1.0,
            eps0: d_eps0(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_lemmas")]
    pub lemmas: Vec<String>,
    /// Also run with `alpha = mu / R1`, the other end of the admissible range.
    #[serde(default)]
    pub both_alphas: bool,
    #[serde(default)]
    pub estimate_steps: usize,
}

fn d_trials() -> usize {
    1000
}
fn d_lemmas() -> Vec<String> {
    LEMMAS.iter().map(|s| s.to_string()).collect()
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { trials: d_trials(), lemmas: d_lemmas(), both_alphas: false, estimate_steps: 0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "d_dir")]
    pub dir: PathBuf,
}

fn d_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: d_dir() }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub physics: PhysicsSpec,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub dispersion: DispersionSpec,
    #[serde(default)]
    pub modes: ModesSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn params(&self) -> Result<PhysParams> {
        let p = &self.physics;
        PhysParams::new(p.r1, p.r2, p.mu, p.g, p.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        self.profile(&params)?;
        Scheme::parse(&self.grid.scheme)?;
        TimeScheme::parse(&self.sim.scheme)?;
        if self.grid.kmax == 0 {
            return Err(Error::Config("grid.kmax >= 1 violated".into()));
        }
        if self.dispersion.k_max == 0 {
            return Err(Error::Config("dispersion.k_max >= 1 violated".into()));
        }
        if !(self.dispersion.tol > 0.0) {
            return Err(Error::Config("dispersion.tol > 0 violated".into()));
        }
        if self.modes.count == 0 {
            return Err(Error::Config("modes.count >= 1 violated".into()));
        }
        self.sim_config(1.0)?.validate()?;
        for id in &self.verify.lemmas {
            crate::verify::Lemma::parse(id)?;
        }
        Ok(())
    }

    pub fn profile(&self, params: &PhysParams) -> Result<DensityProfile> {
        let s = &self.profile;
        let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::Config(format!("profile.{what} is required for kind `{}`", s.kind)));
        let kind = match s.kind.as_str() {
            "constant" => ProfileKind::Constant { rho0: s.rho0.unwrap_or(1.0) },
            "linear" => ProfileKind::Linear { rho0: need(s.rho0, "rho0")?, slope: need(s.slope, "slope")? },
            "tanh-layer" | "tanh" => ProfileKind::Tanh {
                base: s.base.unwrap_or(1.5),
                amp: s.amp.unwrap_or(0.5),
                center: s.center.unwrap_or(1.5),
                width: s.width.unwrap_or(0.1),
            },
            "polynomial" => ProfileKind::Polynomial {
                coeffs: s.coeffs.clone().ok_or_else(|| Error::Config("profile.coeffs is required for kind `polynomial`".into()))?,
            },
            "tabulated" => {
                let path = s.path.as_ref().ok_or_else(|| Error::Config("profile.path is required for kind `tabulated`".into()))?;
                return DensityProfile::from_csv(path, params);
            }
            other => return Err(Error::Config(format!("unknown profile kind `{other}`"))),
        };
        DensityProfile::new(kind, params)
    }

    pub fn sim_config(&self, t_final: f64) -> Result<SimConfig> {
        let s = &self.sim;
        Ok(SimConfig {
            dt: s.dt,
            t_final,
            scheme: TimeScheme::parse(&s.scheme)?,
            amplitude: s.amplitude,
            cfl_cap: s.cfl_cap,
            q_list: s.q_list.clone(),
            sample_every: s.sample_every,
            vr_stop: None,
        })
    }
}

/// Problem data shared by the subcommands.
pub struct Setup {
    pub cfg: RunConfig,
    pub params: PhysParams,
    pub steady: SteadyState,
    pub space: Arc<TrialSpace>,
    pub out: PathBuf,
}

impl Setup {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.params()?;
        let profile = cfg.profile(&params)?;
        let grid = Arc::new(build_grid(cfg.grid.n, &params, Scheme::parse(&cfg.grid.scheme)?)?);
        let steady = hydrostatic_pressure(&profile, &params, &grid)?;
        let space = Arc::new(build_trial_space(&grid)?);
        let out = cfg.output.dir.clone();
        fs::create_dir_all(&out)
            .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", out.display())))?;
        Ok(Self { cfg, params, steady, space, out })
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, Value::from)
}

pub struct DispersionOutput {
    pub curve: DispersionCurve,
    pub two_d: MaxGrowth2d,
    pub summary: Value,
}

pub fn run_dispersion(s: &Setup) -> Result<DispersionOutput> {
    let curve = sweep_k(&s.steady, &s.space, s.cfg.dispersion.k_max, s.cfg.dispersion.tol)?;
    let two_d = max_growth_2d(&s.steady, &s.space, s.cfg.dispersion.k_max)?;
    let mut csv = String::from("k,lambda0,lambda_c,lambda_upper,phi_residual,iterations,stable\n");
    for p in &curve.points {
        let (l0, res) = match p.lambda0 {
            Some(l) => (fmt17(l), fmt17(p.root_residual)),
            None => (String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.k,
            l0,
            fmt17(p.lambda_c),
            fmt17(p.lambda_upper),
            res,
            p.iterations,
            p.stable()
        ));
    }
    fs::write(s.out.join("dispersion.csv"), csv)?;
    let continuous = match curve.k_star {
        Some(k) => {
            let cores = FormCores::new(&s.space, &s.steady)?;
            let (xi, lam) = refine_continuous(&cores, k, s.cfg.dispersion.tol)?;
            json!({ "xi": xi, "lambda": lam })
        }
        None => Value::Null,
    };
    let failed: Vec<Value> =
        curve.points.iter().filter_map(|p| p.error.as_ref().map(|e| json!({ "k": p.k, "error": e }))).collect();
    let condition = curve.lambda_tilde.map(|lt| 3.0 * lt > 2.0 * two_d.lambda_tilde_tilde);
    let summary = json!({
        "stable": curve.lambda_tilde.is_none(),
        "LambdaTilde": opt(curve.lambda_tilde),
        "k_star": curve.k_star,
        "sweep_truncated": curve.truncated,
        "LambdaTildeTilde": two_d.lambda_tilde_tilde,
        "LambdaTildeTilde_k": two_d.k,
        "continuous_maximum": continuous,
        "three_LambdaTilde_exceeds_two_LambdaTildeTilde": condition,
        "failed_points": failed,
        "params": {
            "R1": s.params.r1, "R2": s.params.r2, "mu": s.params.mu, "g": s.params.g, "alpha": s.params.alpha,
            "profile": s.cfg.profile.kind, "n": s.cfg.grid.n, "scheme": s.cfg.grid.scheme,
            "k_max": s.cfg.dispersion.k_max, "tol": s.cfg.dispersion.tol,
        },
    });
    if curve.truncated {
        eprintln!("warning: the fastest growing wavenumber is the last one swept; raise dispersion.k_max");
    }
    write_json(&s.out.join("summary.json"), &summary)?;
    Ok(DispersionOutput { curve, two_d, summary })
}

pub fn run_modes(s: &Setup, curve: &DispersionCurve) -> Result<ModeSet> {
    let k_star = curve
        .k_star
        .ok_or_else(|| Error::Config("the profile is linearly stable; there are no unstable modes to build".into()))?;
    let j = s.cfg.modes.j.unwrap_or(k_star);
    let set = ModeSet::from_curve(curve, &s.steady, j, s.cfg.modes.count, s.cfg.modes.coeffs.clone())?;
    let mut meta = Vec::new();
    for m in &set.modes {
        m.write_csv(&s.out.join(format!("mode_k{}.csv", m.k)))?;
        let res = mode_residual(m, &s.steady, &s.steady.grid)?;
        let mut v = m.metadata();
        v["residual"] = json!({
            "momentum_r": res.res1, "momentum_theta": res.res2,
            "divergence": res.res_div, "transport": res.res_transport,
        });
        v["robin_residual"] = json!(robin_residual(m, &s.steady));
        meta.push(v);
    }
    write_json(&s.out.join("modes.json"), &json!({ "j": set.j, "coeffs": set.coeffs, "modes": meta }))?;
    Ok(set)
}

pub struct EvolveOutput {
    pub rows: Vec<DiagRow>,
    pub rate: Option<(f64, f64)>,
    pub stopped_early: Option<String>,
    pub delta: f64,
}

fn write_diagnostics(path: &Path, rows: &[DiagRow], q_list: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let qs: Vec<String> = q_list.iter().map(|q| format!("rho_q{}", q)).collect();
    writeln!(f, "t,vr_l2,vth_l2,rho_l2,F1,{},min_density", qs.join(","))?;
    for r in rows {
        let qv: Vec<String> = r.rho_q.iter().map(|&x| fmt17(x)).collect();
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            fmt17(r.t),
            fmt17(r.vr_l2),
            fmt17(r.vth_l2),
            fmt17(r.rho_l2),
            fmt17(r.f1),
            qv.join(","),
            fmt17(r.min_density)
        )?;
    }
    Ok(())
}

pub fn run_evolve(s: &Setup, set: &ModeSet, dynamics: Dynamics, dir: &Path) -> Result<EvolveOutput> {
    fs::create_dir_all(dir)?;
    let kmax = s.cfg.grid.kmax;
    if set.k_top() as usize > kmax {
        return Err(Error::Config(format!("grid.kmax = {kmax} cannot hold wavenumber {}", set.k_top())));
    }
    let lam = set.lambda_max();
    let growth_time = 1000f64.ln() / lam;
    let t_final = match dynamics {
        Dynamics::Linear => s.cfg.sim.t_linear.unwrap_or(growth_time),
        Dynamics::Nonlinear => s.cfg.sim.t_nonlinear.unwrap_or(growth_time),
    };
    let mut sim = s.cfg.sim_config(t_final)?;
    if dynamics == Dynamics::Nonlinear {
        sim.vr_stop = Some(s.cfg.sim.vr_stop);
    }
    let init = init_from_mode(set, sim.amplitude, kmax, &s.steady)?;
    let mut ev = Evolver::new(dynamics, &s.steady, &init, &sim)?;
    let snap_every = s.cfg.sim.snapshot_every;
    let out = run_sim(&mut ev, &sim, |ev, _| {
        if snap_every > 0 && ev.steps % snap_every == 0 {
            let st = ev.state()?;
            write_snapshot(
                &dir.join(format!("snap_{:06}.annf1", ev.steps)),
                st.t,
                &[("vr", &st.v.vr), ("vth", &st.v.vth), ("p", &st.p), ("rho", &st.rho)],
            )?;
        }
        Ok(())
    })?;
    write_diagnostics(&dir.join("diagnostics.csv"), &out.diagnostics, &sim.q_list)?;
    let last = ev.state()?;
    write_lattice_csv(&dir.join("final_lattice.csv"), 64, &[("vr", &last.v.vr), ("vth", &last.v.vth), ("rho", &last.rho)])?;
    let t: Vec<f64> = out.diagnostics.iter().map(|r| r.t).collect();
    let y: Vec<f64> = out.diagnostics.iter().map(|r| r.vr_l2).collect();
    let t_end = *t.last().unwrap_or(&0.0);
    let rate = measure_growth(&t, &y, (0.2 * t_end, t_end)).ok();
    Ok(EvolveOutput { rows: out.diagnostics, rate, stopped_early: out.stopped_early, delta: ev.delta })
}

pub fn run_verify(s: &Setup) -> Result<Vec<CheckResult>> {
    let mut alphas = vec![s.params.alpha];
    if s.cfg.verify.both_alphas {
        alphas = vec![0.0, s.params.mu / s.params.r1];
    }
    let mut results = Vec::new();
    let mut estimates = Vec::new();
    for &alpha in &alphas {
        let params = PhysParams { alpha, ..s.params.clone() };
        let h = Harness::new(&s.steady.grid, s.cfg.grid.kmax, &params)?;
        for id in &s.cfg.verify.lemmas {
            let mut r = check_inequality(id, s.cfg.verify.trials, s.cfg.seed, &h)?;
            if alphas.len() > 1 {
                r.lemma = format!("{}@alpha={}", r.lemma, alpha);
            }
            if s.cfg.verify.estimate_steps > 0 {
                let e = estimate_bounds(id, s.cfg.verify.trials.min(100), s.cfg.verify.estimate_steps, s.cfg.seed, &h)?;
                estimates.push(json!({ "lemma": r.lemma, "lower": e.lower, "upper": e.upper }));
            }
            results.push(r);
        }
    }
    write_verify_csv(&s.out.join("verify.csv"), &results)?;
    if !estimates.is_empty() {
        write_json(&s.out.join("constants.json"), &Value::Array(estimates))?;
    }
    Ok(results)
}

fn rate_json(out: &EvolveOutput, lambda0: f64) -> Value {
    let first = out.rows.first();
    let last = out.rows.last();
    let drift: Vec<Value> = match (first, last) {
        (Some(a), Some(b)) if b.t > a.t => a
            .rho_q
            .iter()
            .zip(&b.rho_q)
            .map(|(x, y)| Value::from((y - x).abs() / x / (b.t - a.t)))
            .collect(),
        _ => Vec::new(),
    };
    let min_density = out.rows.iter().map(|r| r.min_density).fold(f64::INFINITY, f64::min);
    json!({
        "measured_rate": out.rate.map(|r| r.0),
        "fit_r2": out.rate.map(|r| r.1),
        "predicted_rate": lambda0,
        "measured_rate_rel_error": out.rate.map(|r| (r.0 / lambda0 - 1.0).abs()),
        "t_end": last.map(|r| r.t),
        "stopped_early": out.stopped_early,
        "density_norm_drift_per_time": drift,
        "min_density": min_density,
        "positivity_threshold": out.delta,
    })
}

pub fn run_command(cmd: Command, cfg: RunConfig) -> Result<()> {
    let s = Setup::new(cfg)?;
    match cmd {
        Command::Dispersion => {
            run_dispersion(&s)?;
        }
        Command::Modes => {
            let d = run_dispersion(&s)?;
            run_modes(&s, &d.curve)?;
        }
        Command::EvolveLinear | Command::EvolveNonlinear => {
            let d = run_dispersion(&s)?;
            let set = run_modes(&s, &d.curve)?;
            let dynamics = if cmd == Command::EvolveLinear { Dynamics::Linear } else { Dynamics::Nonlinear };
            let out = run_evolve(&s, &set, dynamics, &s.out)?;
            write_json(&s.out.join("evolve.json"), &rate_json(&out, set.lambda_max()))?;
        }
        Command::Verify => {
            run_verify(&s)?;
        }
        Command::Pipeline => {
            let d = run_dispersion(&s)?;
            let set = run_modes(&s, &d.curve)?;
            let lam = set.lambda_max();
            let lin = run_evolve(&s, &set, Dynamics::Linear, &s.out.join("linear"))?;
            let non = run_evolve(&s, &set, Dynamics::Nonlinear, &s.out.join("nonlinear"))?;
            let lt = d.curve.lambda_tilde.unwrap_or(lam);
            let amp = s.cfg.sim.amplitude;
            let t_k = lipschitz_time(s.cfg.sim.lipschitz_k, amp, lt).ok();
            let t_escape = escape_time(amp, s.cfg.sim.eps0, lt);
            let report = json!({
                "k_star": d.curve.k_star,
                "modes": set.modes.iter().map(|m| m.k).collect::<Vec<_>>(),
                "linear": rate_json(&lin, lam),
                "nonlinear": rate_json(&non, lam),
                "LambdaTilde": lt,
                "LambdaTildeTilde": d.two_d.lambda_tilde_tilde,
                "LambdaTildeTilde_minus_LambdaTilde": d.two_d.lambda_tilde_tilde - lt,
                "three_LambdaTilde_exceeds_two_LambdaTildeTilde": 3.0 * lt > 2.0 * d.two_d.lambda_tilde_tilde,
                "t_K": { "K": s.cfg.sim.lipschitz_k, "a": amp, "value": opt(t_k) },
                "T_delta": {
                    "delta_star": amp,
                    "eps0": s.cfg.sim.eps0,
                    "value": opt(t_escape.as_ref().ok().copied()),
                    "error": t_escape.err().map(|e| e.to_string()),
                },
            });
            write_json(&s.out.join("report.json"), &report)?;
        }
    }
    Ok(())
}

/// Process exit status for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        2
    } else {
        3
    }
}
