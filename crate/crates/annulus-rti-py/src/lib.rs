//! Python bindings for the annulus Rayleigh-Taylor toolkit.

use std::path::PathBuf;
use std::sync::Arc;

use annulus_rti::cli::{run_command, Command, RunConfig};
use annulus_rti::dispersion::{lambda_upper_bound, max_growth_2d, sweep_k};
use annulus_rti::evolve::{self, init_from_mode, DiagRow, Dynamics, Evolver, SimConfig};
use annulus_rti::modes::{build_mode, mode_residual, ModeSet, RadialMode};
use annulus_rti::profiles::{hydrostatic_pressure, DensityProfile, PhysParams, SteadyState};
use annulus_rti::radial_ops::{build_grid, build_trial_space, Scheme, TrialSpace};
use annulus_rti::verify::{self, Harness};
use annulus_rti::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyclass(name = "PhysParams", module = "annulus_rti_py")]
#[derive(Clone)]
struct PyPhysParams {
    inner: PhysParams,
}

#[pymethods]
impl PyPhysParams {
    #[new]
    #[pyo3(signature = (r1=1.0, r2=2.0, mu=0.01, g=1.0, alpha=0.0))]
    fn new(r1: f64, r2: f64, mu: f64, g: f64, alpha: f64) -> PyResult<Self> {
        Ok(Self { inner: PhysParams::new(r1, r2, mu, g, alpha).map_err(py_err)? })
    }

    #[getter]
    fn r1(&self) -> f64 {
        self.inner.r1
    }
    #[getter]
    fn r2(&self) -> f64 {
        self.inner.r2
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn g(&self) -> f64 {
        self.inner.g
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    fn slip_weight(&self) -> f64 {
        self.inner.slip_weight()
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("PhysParams(r1={}, r2={}, mu={}, g={}, alpha={})", p.r1, p.r2, p.mu, p.g, p.alpha)
    }
}

/// A steady state on a Chebyshev grid, the entry point to every computation.
#[pyclass(name = "Problem", module = "annulus_rti_py")]
struct PyProblem {
    steady: SteadyState,
    space: Arc<TrialSpace>,
}

fn profile_from(kind: &str, params: &PhysParams, rho0: f64) -> Result<DensityProfile, Error> {
    match kind {
        "tanh-layer" | "tanh" => DensityProfile::tanh_layer(params),
        "constant" => DensityProfile::constant(rho0, params),
        other => Err(Error::Config(format!("unknown profile kind `{other}` (use tanh-layer or constant)"))),
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (n=64, profile="tanh-layer", params=None, rho0=1.0))]
    fn new(n: usize, profile: &str, params: Option<PyPhysParams>, rho0: f64) -> PyResult<Self> {
        let params = params.map(|p| p.inner).unwrap_or_else(PhysParams::baseline);
        let build = || -> Result<Self, Error> {
            let prof = profile_from(profile, &params, rho0)?;
            let grid = Arc::new(build_grid(n, &params, Scheme::Chebyshev)?);
            let steady = hydrostatic_pressure(&prof, &params, &grid)?;
            let space = Arc::new(build_trial_space(&grid)?);
            Ok(Self { steady, space })
        };
        build().map_err(py_err)
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.steady.grid.nodes.iter().copied().collect()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.steady.rho.iter().copied().collect()
    }

    /// Growth rate per wavenumber `1..=k_max`; `None` where stable.
    #[pyo3(signature = (k_max=32, tol=1e-10))]
    fn dispersion<'py>(&self, py: Python<'py>, k_max: usize, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let curve = sweep_k(&self.steady, &self.space, k_max, tol).map_err(py_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("k", curve.points.iter().map(|p| p.k).collect::<Vec<_>>())?;
        d.set_item("lambda0", curve.points.iter().map(|p| p.lambda0).collect::<Vec<_>>())?;
        d.set_item("lambda_c", curve.points.iter().map(|p| p.lambda_c).collect::<Vec<_>>())?;
        d.set_item("lambda_upper", curve.points.iter().map(|p| p.lambda_upper).collect::<Vec<_>>())?;
        d.set_item("lambda_tilde", curve.lambda_tilde)?;
        d.set_item("k_star", curve.k_star)?;
        d.set_item("truncated", curve.truncated)?;
        Ok(d)
    }

    #[pyo3(signature = (k_max=32))]
    fn max_growth_2d(&self, k_max: usize) -> PyResult<(f64, i64)> {
        let m = max_growth_2d(&self.steady, &self.space, k_max).map_err(py_err)?;
        Ok((m.lambda_tilde_tilde, m.k))
    }

    fn mode(&self, k: i64) -> PyResult<PyMode> {
        let forms = annulus_rti::dispersion::assemble_forms(&self.space, &self.steady, k.unsigned_abs() as f64)
            .map_err(py_err)?;
        let point = annulus_rti::dispersion::lambda0(&forms, 1e-12).map_err(py_err)?;
        let mode = build_mode(k, &point, &self.steady, &self.steady.grid).map_err(py_err)?;
        Ok(PyMode { mode, steady: self.steady.clone() })
    }

    /// Linear or nonlinear run seeded with the mode `k`.
    #[pyo3(signature = (k, kmax=16, nonlinear=false, dt=0.01, amplitude=1e-6))]
    fn simulation(&self, k: i64, kmax: usize, nonlinear: bool, dt: f64, amplitude: f64) -> PyResult<PySimulation> {
        let mode = self.mode(k)?.mode;
        let set = ModeSet::new(vec![1.0], vec![mode]).map_err(py_err)?;
        let cfg = SimConfig { dt, t_final: dt, amplitude, ..SimConfig::default() };
        let init = init_from_mode(&set, amplitude, kmax, &self.steady).map_err(py_err)?;
        let dynamics = if nonlinear { Dynamics::Nonlinear } else { Dynamics::Linear };
        let ev = Evolver::new(dynamics, &self.steady, &init, &cfg).map_err(py_err)?;
        Ok(PySimulation { ev })
    }
}

#[pyclass(name = "Mode", module = "annulus_rti_py")]
struct PyMode {
    mode: RadialMode,
    steady: SteadyState,
}

#[pymethods]
impl PyMode {
    #[getter]
    fn k(&self) -> i64 {
        self.mode.k
    }
    #[getter]
    fn lambda0(&self) -> f64 {
        self.mode.lambda0
    }
    #[getter]
    fn w1(&self) -> Vec<f64> {
        self.mode.w1.iter().copied().collect()
    }
    #[getter]
    fn w2(&self) -> Vec<f64> {
        self.mode.w2.iter().copied().collect()
    }
    #[getter]
    fn h1(&self) -> Vec<f64> {
        self.mode.h1.iter().copied().collect()
    }
    #[getter]
    fn h2(&self) -> Vec<f64> {
        self.mode.h2.iter().copied().collect()
    }

    /// Largest normalized residual of the mode equations.
    fn residual(&self) -> PyResult<f64> {
        Ok(mode_residual(&self.mode, &self.steady, &self.steady.grid).map_err(py_err)?.max())
    }
}

fn diag_dict<'py>(py: Python<'py>, r: &DiagRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("t", r.t)?;
    d.set_item("vr_l2", r.vr_l2)?;
    d.set_item("vth_l2", r.vth_l2)?;
    d.set_item("rho_l2", r.rho_l2)?;
    d.set_item("F1", r.f1)?;
    d.set_item("rho_q", r.rho_q.clone())?;
    d.set_item("min_density", r.min_density)?;
    Ok(d)
}

#[pyclass(name = "Simulation", module = "annulus_rti_py", unsendable)]
struct PySimulation {
    ev: Evolver,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn t(&self) -> f64 {
        self.ev.t
    }

    #[pyo3(signature = (steps=1))]
    fn step(&mut self, steps: usize) -> PyResult<()> {
        for _ in 0..steps {
            self.ev.step().map_err(py_err)?;
        }
        Ok(())
    }

    fn diagnostics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        diag_dict(py, &self.ev.diagnostics())
    }
}

#[pyfunction]
#[pyo3(name = "lambda_upper_bound", signature = (xi, max_drho, params=None))]
fn py_lambda_upper_bound(xi: f64, max_drho: f64, params: Option<PyPhysParams>) -> f64 {
    let p = params.map(|p| p.inner).unwrap_or_else(PhysParams::baseline);
    lambda_upper_bound(xi, &p, max_drho)
}

#[pyfunction]
fn lipschitz_time(k: f64, a: f64, lambda_tilde: f64) -> PyResult<f64> {
    evolve::lipschitz_time(k, a, lambda_tilde).map_err(py_err)
}

#[pyfunction]
fn escape_time(delta_star: f64, eps0: f64, lambda_tilde: f64) -> PyResult<f64> {
    evolve::escape_time(delta_star, eps0, lambda_tilde).map_err(py_err)
}

#[pyfunction]
fn measure_growth(t: Vec<f64>, y: Vec<f64>, t0: f64, t1: f64) -> PyResult<(f64, f64)> {
    evolve::measure_growth(&t, &y, (t0, t1)).map_err(py_err)
}

/// Runs one inequality check and returns `(violations, worst_ratio)`.
#[pyfunction]
#[pyo3(signature = (lemma, trials=100, seed=0, n=32, kmax=8, params=None))]
fn check_inequality(lemma: &str, trials: usize, seed: u64, n: usize, kmax: usize, params: Option<PyPhysParams>) -> PyResult<(usize, f64)> {
    let p = params.map(|p| p.inner).unwrap_or_else(PhysParams::baseline);
    let run = || -> Result<(usize, f64), Error> {
        let grid = Arc::new(build_grid(n, &p, Scheme::Chebyshev)?);
        let h = Harness::new(&grid, kmax, &p)?;
        let r = verify::check_inequality(lemma, trials, seed, &h)?;
        Ok((r.violations, r.worst_ratio))
    };
    run().map_err(py_err)
}

/// Runs a batch subcommand with a TOML configuration string.
#[pyfunction]
#[pyo3(signature = (command, config="", out_dir=None))]
fn run_cli(command: &str, config: &str, out_dir: Option<PathBuf>) -> PyResult<()> {
    let cmd = match command {
        "dispersion" => Command::Dispersion,
        "modes" => Command::Modes,
        "evolve-linear" => Command::EvolveLinear,
        "evolve-nonlinear" => Command::EvolveNonlinear,
        "verify" => Command::Verify,
        "pipeline" => Command::Pipeline,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let mut cfg = RunConfig::from_toml(config).map_err(py_err)?;
    if let Some(dir) = out_dir {
        cfg.output.dir = dir;
    }
    run_command(cmd, cfg).map_err(py_err)
}

#[pymodule]
fn annulus_rti_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhysParams>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyMode>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(py_lambda_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz_time, m)?)?;
    m.add_function(wrap_pyfunction!(escape_time, m)?)?;
    m.add_function(wrap_pyfunction!(measure_growth, m)?)?;
    m.add_function(wrap_pyfunction!(check_inequality, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
