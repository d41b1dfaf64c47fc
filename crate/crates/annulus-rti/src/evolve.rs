//! Time integration of the linearized and nonlinear perturbation equations.
//!
//! Velocities live in a divergence-free Galerkin space per Fourier mode:
//! for `k != 0`, `v_r = B c` and `v_theta = (i/k) D(r B c)` with `B` the
//! clamped trial basis of the dispersion solver, so incompressibility and the
//! wall conditions hold exactly and the Robin condition enters naturally. The
//! axisymmetric mode carries `v_theta` only. Viscosity is Crank-Nicolson,
//! everything else second-order Adams-Bashforth. The nonlinear density is
//! advanced by semi-Lagrangian back-tracing of the total density.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::FormCores;
use crate::error::{Error, Result};
use crate::field2d::{vector_laplacian, CVector, FourierTransform, LerayProjector, PolarField, VelocityField, Weight};
use crate::linalg::{gram, symmetrize};
use crate::modes::{superpose_with, ModeSet};
use crate::parallel::pool;
use crate::profiles::SteadyState;
use crate::radial_ops::{build_trial_space, RadialGrid, TrialSpace};
use crate::spline::SplineKnots;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeScheme {
    #[serde(rename = "imex-cn-ab2")]
    ImexCnAb2,
}

impl TimeScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "imex-cn-ab2" => Ok(TimeScheme::ImexCnAb2),
            other => Err(Error::Config(format!("unknown time scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: TimeScheme,
    pub amplitude: f64,
    pub cfl_cap: f64,
    pub q_list: Vec<f64>,
    /// Diagnostics every this many steps (the first and last step always).
    pub sample_every: usize,
    /// Stop once `|v_r|` exceeds this value.
    pub vr_stop: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_final: 1.0,
            scheme: TimeScheme::ImexCnAb2,
            amplitude: 1e-6,
            cfl_cap: 0.5,
            q_list: vec![2.0, 4.0],
            sample_every: 1,
            vr_stop: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt > 0 violated".into()));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config("T > 0 violated".into()));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Config("amplitude > 0 violated".into()));
        }
        if !(self.cfl_cap > 0.0) {
            return Err(Error::Config("cfl_cap > 0 violated".into()));
        }
        if self.q_list.iter().any(|q| !(*q >= 1.0)) {
            return Err(Error::Config("density norm exponents must be >= 1".into()));
        }
        if self.sample_every == 0 {
            return Err(Error::Config("sample_every >= 1 violated".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub v: VelocityField,
    /// Density perturbation.
    pub rho: PolarField,
    pub p: PolarField,
}

/// Perturbation of amplitude `amplitude` along the superposed modes at
/// `t = 0`; the pressure comes from one Leray projection of the force.
pub fn init_from_mode(set: &ModeSet, amplitude: f64, kmax: usize, steady: &SteadyState) -> Result<SimState> {
    let b = superpose_with(set, 0.0, kmax)?;
    let v = VelocityField::new(b.vr.scale(amplitude), b.vth.scale(amplitude))?;
    let rho = b.rho.scale(amplitude);
    let p = force_pressure(&v, &rho, steady)?;
    Ok(SimState { t: 0.0, v, rho, p })
}

/// Gradient part of `mu Lap V - rho g e_r`.
fn force_pressure(v: &VelocityField, rho: &PolarField, steady: &SteadyState) -> Result<PolarField> {
    let lap = vector_laplacian(v)?;
    let f = VelocityField::new(
        lap.vr.scale(steady.params.mu).sub(&rho.scale(steady.params.g))?,
        lap.vth.scale(steady.params.mu),
    )?;
    let (_, p) = LerayProjector::new(&v.vr.grid, v.vr.kmax.max(1))?.project(&f)?;
    Ok(p)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagRow {
    pub t: f64,
    pub vr_l2: f64,
    pub vth_l2: f64,
    pub rho_l2: f64,
    pub f1: f64,
    /// `|r^{1/q} (rho_bar + rho)|_{L^q}` per configured `q`.
    pub rho_q: Vec<f64>,
    pub min_density: f64,
    /// `|grad V|^2`, for the `F1` equivalence check.
    pub grad_sq: f64,
}

struct Shared {
    /// Trial basis for `v_r`, `n x d`.
    b: DMatrix<f64>,
    /// `D(r B)`, `n x d`.
    drb: DMatrix<f64>,
    /// `B_f^T diag(w r) P` and `(D r B)_f^T diag(w r) P`, `d x n`.
    pr: DMatrix<f64>,
    pth: DMatrix<f64>,
    /// Axisymmetric basis (nodal, `v_theta(R2) = 0`) and its load map.
    b0: DMatrix<f64>,
    p0: DMatrix<f64>,
}

struct Block {
    lhs: Cholesky<f64, Dyn>,
    rhs: DMatrix<f64>,
}

pub struct Evolver {
    pub dynamics: Dynamics,
    steady: SteadyState,
    grid: Arc<RadialGrid>,
    kmax: usize,
    dt: f64,
    cfl_cap: f64,
    q_list: Vec<f64>,
    tf: FourierTransform,
    shared: Shared,
    blocks: Vec<Block>,
    /// Galerkin coefficients per `k = 0..=K`.
    c: Vec<CVector>,
    c_prev: Vec<CVector>,
    g_prev: Option<Vec<CVector>>,
    /// Nodal density perturbation per `k = 0..=K`.
    rho: Vec<CVector>,
    rho_rhs_prev: Option<Vec<CVector>>,
    knots: SplineKnots,
    pub t: f64,
    pub steps: usize,
    /// Positivity threshold, half the initial minimum total density.
    pub delta: f64,
    min_spacing: Vec<f64>,
}

fn real_mul(m: &DMatrix<f64>, v: &CVector) -> CVector {
    let re = m * v.map(|z| z.re);
    let im = m * v.map(|z| z.im);
    CVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
}

fn chol_solve(ch: &Cholesky<f64, Dyn>, v: &CVector) -> CVector {
    let re = ch.solve(&v.map(|z| z.re));
    let im = ch.solve(&v.map(|z| z.im));
    CVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
}

fn theta_count(kmax: usize) -> usize {
    // cubic products stay alias free
    let m = 4 * kmax + 2;
    m + (m % 2)
}

impl Evolver {
    pub fn new(dynamics: Dynamics, steady: &SteadyState, init: &SimState, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = Arc::clone(&steady.grid);
        if !init.v.vr.grid.same_as(&grid) || !init.rho.grid.same_as(&grid) {
            return Err(Error::GridMismatch("initial state and steady state use different grids".into()));
        }
        let kmax = init.v.vr.kmax;
        if init.rho.kmax != kmax || init.v.vth.kmax != kmax {
            return Err(Error::GridMismatch("initial fields carry different wavenumber ranges".into()));
        }
        let n = grid.n;
        let space: Arc<TrialSpace> = Arc::new(build_trial_space(&grid)?);
        let cores = FormCores::new(&space, steady)?;
        let fine = grid.fine();
        let r = &grid.nodes;
        let b = space.basis.clone();
        let d1b = grid.d1() * &b;
        let drb = DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] + r[i] * d1b[(i, j)]);
        let wr = fine.w.component_mul(&fine.nodes);
        let load = |m: &DMatrix<f64>| -> DMatrix<f64> {
            let mf = &fine.interp * m;
            let mut t = mf.transpose();
            for j in 0..t.ncols() {
                let s = wr[j];
                t.column_mut(j).scale_mut(s);
            }
            t * &fine.interp
        };
        let pr = load(&b);
        let pth = load(&drb);
        let b0 = DMatrix::from_fn(n, n - 1, |i, j| if i == j { 1.0 } else { 0.0 });
        let p0 = load(&b0);

        let mu = steady.params.mu;
        let dt = cfg.dt;
        let rho_f = DVector::from_iterator(fine.nodes.len(), fine.nodes.iter().map(|&x| steady.profile.eval_clamped(x).0));
        let blocks: Vec<Block> = pool().install(|| {
            (0..=kmax)
                .into_par_iter()
                .map(|k| -> Result<Block> {
                    let (mass, stiff) = if k == 0 {
                        let bf = &fine.interp * &b0;
                        let dbf = &fine.interp * (grid.d1() * &b0);
                        let mass = gram(&bf, &wr.component_mul(&rho_f));
                        let mut stiff = (gram(&dbf, &wr) + gram(&bf, &fine.w.component_div(&fine.nodes))) * mu;
                        stiff[(0, 0)] += mu * steady.params.slip_weight();
                        (mass, stiff)
                    } else {
                        let f = cores.forms(k as f64)?;
                        (f.m1, f.m2 * mu)
                    };
                    let mut lhs = &mass + &stiff * (0.5 * dt);
                    let mut rhs = &mass - &stiff * (0.5 * dt);
                    symmetrize(&mut lhs);
                    symmetrize(&mut rhs);
                    let lhs = lhs.cholesky().ok_or(Error::NonSpd("implicit step matrix"))?;
                    Ok(Block { lhs, rhs })
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut c = Vec::with_capacity(kmax + 1);
        let mut rho = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax as i64 {
            if k == 0 {
                c.push(CVector::from_fn(n - 1, |i, _| Complex64::new(init.v.vth.mode(0)[i].re, 0.0)));
            } else {
                c.push(real_mul(&b.transpose(), init.v.vr.mode(k)));
            }
            rho.push(init.rho.mode(k).clone());
        }
        let knots = SplineKnots::new(grid.nodes.as_slice())?;
        let min_spacing = (0..n)
            .map(|i| {
                let left = if i > 0 { r[i] - r[i - 1] } else { f64::INFINITY };
                let right = if i + 1 < n { r[i + 1] - r[i] } else { f64::INFINITY };
                left.min(right)
            })
            .collect();
        let mut ev = Evolver {
            dynamics,
            steady: steady.clone(),
            grid: Arc::clone(&grid),
            kmax,
            dt,
            cfl_cap: cfg.cfl_cap,
            q_list: cfg.q_list.clone(),
            tf: FourierTransform::new(theta_count(kmax)),
            shared: Shared { b, drb, pr, pth, b0, p0 },
            blocks,
            c_prev: c.clone(),
            c,
            g_prev: None,
            rho,
            rho_rhs_prev: None,
            knots,
            t: init.t,
            steps: 0,
            delta: 0.0,
            min_spacing,
        };
        ev.delta = 0.5 * ev.min_total_density();
        Ok(ev)
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// Nodal `(v_r, v_theta)` per `k = 0..=K` from coefficients.
    fn nodal(&self, c: &[CVector]) -> (Vec<CVector>, Vec<CVector>) {
        let n = self.grid.n;
        let mut vr = Vec::with_capacity(c.len());
        let mut vth = Vec::with_capacity(c.len());
        for (k, ck) in c.iter().enumerate() {
            if k == 0 {
                vr.push(CVector::zeros(n));
                vth.push(real_mul(&self.shared.b0, ck));
            } else {
                vr.push(real_mul(&self.shared.b, ck));
                vth.push(real_mul(&self.shared.drb, ck) * (I / k as f64));
            }
        }
        (vr, vth)
    }

    fn polar(&self, modes: &[CVector]) -> PolarField {
        let mut f = PolarField::zeros(&self.grid, self.kmax);
        for (k, v) in modes.iter().enumerate() {
            if k == 0 {
                f.set_mode(0, v.map(|z| Complex64::new(z.re, 0.0)));
            } else {
                f.set_mode(k as i64, v.clone());
            }
        }
        f
    }

    fn phys(&self, modes: &[CVector]) -> DMatrix<f64> {
        self.polar(modes).to_physical(&self.tf)
    }

    fn modes_of(&self, f: &PolarField) -> Vec<CVector> {
        (0..=self.kmax as i64).map(|k| f.mode(k).clone()).collect()
    }

    pub fn velocity(&self) -> VelocityField {
        let (vr, vth) = self.nodal(&self.c);
        VelocityField { vr: self.polar(&vr), vth: self.polar(&vth) }
    }

    pub fn density(&self) -> PolarField {
        self.polar(&self.rho)
    }

    /// Current state, with the pressure recovered from the force balance.
    pub fn state(&self) -> Result<SimState> {
        let v = self.velocity();
        let rho = self.density();
        let p = force_pressure(&v, &rho, &self.steady)?;
        Ok(SimState { t: self.t, v, rho, p })
    }

    fn total_density_physical(&self) -> DMatrix<f64> {
        let mut rho = self.density().to_physical(&self.tf);
        for i in 0..self.grid.n {
            let base = self.steady.rho[i];
            for j in 0..self.tf.m {
                rho[(i, j)] += base;
            }
        }
        rho
    }

    fn min_total_density(&self) -> f64 {
        self.total_density_physical().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn diagnostics(&self) -> DiagRow {
        let v = self.velocity();
        let rho = self.density();
        let total = self.total_density_physical();
        let r = &self.grid.nodes;
        let w = &self.grid.w;
        let dtheta = 2.0 * PI / self.tf.m as f64;
        let rho_q = self
            .q_list
            .iter()
            .map(|&q| {
                let mut acc = 0.0;
                for i in 0..self.grid.n {
                    let row: f64 = (0..self.tf.m).map(|j| total[(i, j)].abs().powf(q)).sum();
                    acc += w[i] * r[i] * row * dtheta;
                }
                acc.powf(1.0 / q)
            })
            .collect();
        DiagRow {
            t: self.t,
            vr_l2: v.vr.norm(Weight::Radius),
            vth_l2: v.vth.norm(Weight::Radius),
            rho_l2: rho.norm(Weight::Radius),
            f1: v.f1_energy(),
            rho_q,
            min_density: total.iter().copied().fold(f64::INFINITY, f64::min),
            grad_sq: v.grad_norm_sq(),
        }
    }

    /// Largest `dt (|v_r| / dr + |v_theta| / (r dtheta))` over the samples.
    pub fn cfl_number(&self) -> f64 {
        let v = self.velocity();
        let pr = v.vr.to_physical(&self.tf);
        let pt = v.vth.to_physical(&self.tf);
        let dtheta = 2.0 * PI / self.tf.m as f64;
        let mut worst = 0.0f64;
        for i in 0..self.grid.n {
            for j in 0..self.tf.m {
                let c = pr[(i, j)].abs() / self.min_spacing[i] + pt[(i, j)].abs() / (self.grid.nodes[i] * dtheta);
                worst = worst.max(c);
            }
        }
        worst * self.dt
    }

    fn load(&self, k: usize, fr: &CVector, fth: &CVector) -> CVector {
        if k == 0 {
            return real_mul(&self.shared.p0, &fth.map(|z| Complex64::new(z.re, 0.0)));
        }
        let kf = k as f64;
        real_mul(&self.shared.pr, fr) * Complex64::new(kf * kf, 0.0) - real_mul(&self.shared.pth, fth) * (I * kf)
    }

    fn advance_momentum(&mut self, g: Vec<CVector>) -> Result<()> {
        let g_prev = self.g_prev.take().unwrap_or_else(|| g.clone());
        let dt = self.dt;
        let new_c: Vec<CVector> = pool().install(|| {
            (0..=self.kmax)
                .into_par_iter()
                .map(|k| {
                    let blk = &self.blocks[k];
                    let mut rhs = real_mul(&blk.rhs, &self.c[k]);
                    rhs += (&g[k] * Complex64::new(1.5 * dt, 0.0)) - (&g_prev[k] * Complex64::new(0.5 * dt, 0.0));
                    chol_solve(&blk.lhs, &rhs)
                })
                .collect()
        });
        self.c_prev = std::mem::replace(&mut self.c, new_c);
        self.g_prev = Some(g);
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let mut worst = 0.0f64;
        for v in self.c.iter().chain(self.rho.iter()) {
            for z in v.iter() {
                let a = z.norm();
                if !a.is_finite() {
                    return Err(Error::BlowUp(f64::INFINITY));
                }
                worst = worst.max(a);
            }
        }
        if worst > OVERFLOW_GUARD {
            return Err(Error::BlowUp(worst));
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        match self.dynamics {
            Dynamics::Linear => self.step_linear(),
            Dynamics::Nonlinear => self.step_nonlinear(),
        }
    }

    pub fn step_linear(&mut self) -> Result<()> {
        let (vr, _) = self.nodal(&self.c);
        let g_acc = self.steady.params.g;
        let zero = CVector::zeros(self.grid.n);
        let forcing: Vec<CVector> =
            (0..=self.kmax).map(|k| self.load(k, &(&self.rho[k] * Complex64::new(-g_acc, 0.0)), &zero)).collect();
        let drho = &self.steady.drho;
        let rhs: Vec<CVector> =
            vr.iter().map(|v| CVector::from_fn(v.len(), |i, _| -v[i] * drho[i])).collect();
        let prev = self.rho_rhs_prev.take().unwrap_or_else(|| rhs.clone());
        for k in 0..=self.kmax {
            let upd = (&rhs[k] * Complex64::new(1.5, 0.0) - &prev[k] * Complex64::new(0.5, 0.0)) * Complex64::new(self.dt, 0.0);
            self.rho[k] += upd;
        }
        self.rho[0].iter_mut().for_each(|z| z.im = 0.0);
        self.rho_rhs_prev = Some(rhs);
        self.advance_momentum(forcing)?;
        self.t += self.dt;
        self.steps += 1;
        self.check_finite()
    }

    pub fn step_nonlinear(&mut self) -> Result<()> {
        let cfl = self.cfl_number();
        if cfl > self.cfl_cap {
            return Err(Error::CflViolation { dt: self.dt, cap: self.dt * self.cfl_cap / cfl });
        }
        let grid = Arc::clone(&self.grid);
        let n = grid.n;
        let m = self.tf.m;
        let r = &grid.nodes;
        let (vr, vth) = self.nodal(&self.c);
        let started = self.g_prev.is_some();
        let (vr_old, vth_old) = self.nodal(&self.c_prev);

        let d1 = grid.d1();
        let dr = |modes: &[CVector]| -> Vec<CVector> { modes.iter().map(|v| real_mul(d1, v)).collect() };
        let dth = |modes: &[CVector]| -> Vec<CVector> {
            modes.iter().enumerate().map(|(k, v)| v * (I * k as f64)).collect()
        };
        let ur = self.phys(&vr);
        let ut = self.phys(&vth);
        let ur_r = self.phys(&dr(&vr));
        let ut_r = self.phys(&dr(&vth));
        let ur_t = self.phys(&dth(&vr));
        let ut_t = self.phys(&dth(&vth));
        let rt = self.phys(&self.rho);
        let inv_dt = if started { 1.0 / self.dt } else { 0.0 };
        let ar = (&ur - self.phys(&vr_old)) * inv_dt;
        let at = (&ut - self.phys(&vth_old)) * inv_dt;
        let g_acc = self.steady.params.g;
        let mut fr = DMatrix::<f64>::zeros(n, m);
        let mut ft = DMatrix::<f64>::zeros(n, m);
        for i in 0..n {
            let ri = r[i];
            let rb = self.steady.rho[i];
            for j in 0..m {
                let (a, b) = (ur[(i, j)], ut[(i, j)]);
                let rho_tot = rb + rt[(i, j)];
                let adv_r = a * ur_r[(i, j)] + b / ri * ur_t[(i, j)] - b * b / ri;
                let adv_t = a * ut_r[(i, j)] + b / ri * ut_t[(i, j)] + a * b / ri;
                fr[(i, j)] = -g_acc * rt[(i, j)] - rt[(i, j)] * ar[(i, j)] - rho_tot * adv_r;
                ft[(i, j)] = -rt[(i, j)] * at[(i, j)] - rho_tot * adv_t;
            }
        }
        let fr = self.modes_of(&PolarField::from_physical(&grid, self.kmax, &fr, &self.tf));
        let ft = self.modes_of(&PolarField::from_physical(&grid, self.kmax, &ft, &self.tf));
        let forcing: Vec<CVector> = (0..=self.kmax).map(|k| self.load(k, &fr[k], &ft[k])).collect();
        self.advance_momentum(forcing)?;

        // density along characteristics with the mid-step velocity
        let (vr_new, vth_new) = self.nodal(&self.c);
        let half = |a: &[CVector], b: &[CVector]| -> Vec<CVector> {
            a.iter().zip(b).map(|(x, y)| (x + y) * Complex64::new(0.5, 0.0)).collect()
        };
        let hr = half(&vr, &vr_new);
        let ht = half(&vth, &vth_new);
        let ur_h = self.phys(&hr);
        let ut_h = self.phys(&ht);
        let sr = SpectralSpline::new(&self.knots, &hr);
        let st = SpectralSpline::new(&self.knots, &ht);
        let srho = SpectralSpline::new(&self.knots, &self.rho);
        let (r1, r2) = (grid.r1, grid.r2);
        let dt = self.dt;
        let profile = &self.steady.profile;
        let rho_bar = &self.steady.rho;
        let thetas: Vec<f64> = (0..m).map(|j| self.tf.theta(j)).collect();
        let rows: Vec<Vec<f64>> = pool().install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let ri = r[i];
                    (0..m)
                        .map(|j| {
                            let th = thetas[j];
                            let rm = (ri - 0.5 * dt * ur_h[(i, j)]).clamp(r1, r2);
                            let tm = th - 0.5 * dt * ut_h[(i, j)] / ri;
                            let rd = (ri - dt * sr.eval(rm, tm)).clamp(r1, r2);
                            let td = th - dt * st.eval(rm, tm) / rm;
                            profile.eval_clamped(rd).0 + srho.eval(rd, td) - rho_bar[i]
                        })
                        .collect()
                })
                .collect()
        });
        let vals = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
        self.rho = self.modes_of(&PolarField::from_physical(&grid, self.kmax, &vals, &self.tf));
        self.t += self.dt;
        self.steps += 1;
        self.check_finite()?;
        let min = self.min_total_density();
        if min < 0.5 * self.delta {
            return Err(Error::PositivityLoss { min, threshold: 0.5 * self.delta });
        }
        Ok(())
    }
}

/// Fourier series in theta whose radial coefficients are cubic splines.
struct SpectralSpline<'a> {
    knots: &'a SplineKnots,
    re: Vec<(Vec<f64>, Vec<f64>)>,
    im: Vec<(Vec<f64>, Vec<f64>)>,
}

impl<'a> SpectralSpline<'a> {
    fn new(knots: &'a SplineKnots, modes: &[CVector]) -> Self {
        let mut re = Vec::with_capacity(modes.len());
        let mut im = Vec::with_capacity(modes.len());
        for v in modes {
            let a: Vec<f64> = v.iter().map(|z| z.re).collect();
            let b: Vec<f64> = v.iter().map(|z| z.im).collect();
            let ma = knots.second_derivatives(&a);
            let mb = knots.second_derivatives(&b);
            re.push((a, ma));
            im.push((b, mb));
        }
        Self { knots, re, im }
    }

    fn eval(&self, r: f64, theta: f64) -> f64 {
        let x = &self.knots.x;
        let i = self.knots.segment(r);
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - r) / h;
        let b = (r - x[i]) / h;
        let ca = (a * a * a - a) * h * h / 6.0;
        let cb = (b * b * b - b) * h * h / 6.0;
        let spl = |(y, m): &(Vec<f64>, Vec<f64>)| a * y[i] + b * y[i + 1] + ca * m[i] + cb * m[i + 1];
        let step = Complex64::from_polar(1.0, theta);
        let mut phase = Complex64::new(1.0, 0.0);
        let mut acc = spl(&self.re[0]);
        for k in 1..self.re.len() {
            phase *= step;
            let z = Complex64::new(spl(&self.re[k]), spl(&self.im[k]));
            acc += 2.0 * (z * phase).re;
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub diagnostics: Vec<DiagRow>,
    pub steps: usize,
    /// Why the run ended before `t_final`, if it did.
    pub stopped_early: Option<String>,
}

/// Advances to `cfg.t_final`, sampling diagnostics; `on_sample` sees the
/// evolver after each sample.
pub fn run<F: FnMut(&Evolver, &DiagRow) -> Result<()>>(ev: &mut Evolver, cfg: &SimConfig, mut on_sample: F) -> Result<RunOutput> {
    let total = cfg.steps();
    let mut rows = Vec::new();
    let first = ev.diagnostics();
    on_sample(ev, &first)?;
    rows.push(first);
    let mut stopped = None;
    for s in 1..=total {
        ev.step()?;
        let sample = s % cfg.sample_every == 0 || s == total;
        if sample || cfg.vr_stop.is_some() {
            let row = ev.diagnostics();
            let over = cfg.vr_stop.map_or(false, |lim| row.vr_l2 > lim);
            if over {
                stopped = Some(format!("|v_r| exceeded {:e} at t = {}", cfg.vr_stop.unwrap(), row.t));
                break;
            }
            if sample {
                on_sample(ev, &row)?;
                rows.push(row);
            }
        }
    }
    Ok(RunOutput { diagnostics: rows, steps: ev.steps, stopped_early: stopped })
}

/// Least-squares slope of `ln y` against `t` over `t0 <= t <= t1`, with the
/// coefficient of determination.
pub fn measure_growth(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    if t.len() != y.len() {
        return Err(Error::OutOfRange("series lengths differ".into()));
    }
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(&ti, _)| ti >= window.0 && ti <= window.1).map(|(&a, &b)| (a, b)).collect();
    if pts.len() < 2 {
        return Err(Error::OutOfRange(format!("window [{}, {}] holds fewer than two samples", window.0, window.1)));
    }
    if pts.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::NonPositiveSeries);
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(ti, v) in &pts {
        let dx = ti - tm;
        let dy = v.ln() - lm;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::OutOfRange("window holds a single time".into()));
    }
    let rate = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((rate, r2))
}

/// `t_K = (2 / Lambda) ln(2K / a)`.
pub fn lipschitz_time(k: f64, a: f64, lambda_tilde: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::NonPositiveInput("K"));
    }
    if !(a > 0.0) {
        return Err(Error::NonPositiveInput("a"));
    }
    if !(lambda_tilde > 0.0) {
        return Err(Error::NonPositiveInput("growth rate"));
    }
    Ok(2.0 / lambda_tilde * (2.0 * k / a).ln())
}

/// `T = (1 / Lambda) ln(2 eps0 / delta)` for `0 < delta <= 2 eps0`.
pub fn escape_time(delta_star: f64, eps0: f64, lambda_tilde: f64) -> Result<f64> {
    if !(lambda_tilde > 0.0) {
        return Err(Error::NonPositiveInput("growth rate"));
    }
    if !(delta_star > 0.0 && delta_star <= 2.0 * eps0) {
        return Err(Error::OutOfRange(format!("delta* = {delta_star} must lie in (0, 2 eps0 = {}]", 2.0 * eps0)));
    }
    Ok((2.0 * eps0 / delta_star).ln() / lambda_tilde)
}
