//! Unstable eigenmodes `(w1, w2, h1, h2)` reconstructed from a dispersion
//! point, their residuals against the first-order mode system, and
//! superpositions of several modes into growing 2D fields.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::dispersion::{DispersionCurve, DispersionPoint};
use crate::error::{Error, Result};
use crate::field2d::{fmt17, CVector, PolarField};
use crate::profiles::SteadyState;
use crate::radial_ops::RadialGrid;

#[derive(Debug, Clone)]
pub struct RadialMode {
    pub k: i64,
    pub lambda0: f64,
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
    pub h1: DVector<f64>,
    pub h2: DVector<f64>,
    pub grid: Arc<RadialGrid>,
    /// `W' .. W''''` on the grid, kept for the residual checks.
    derivs: [DVector<f64>; 4],
}

fn check_same(a: &RadialGrid, b: &RadialGrid) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("n = {} vs n = {}", a.n, b.n)))
    }
}

pub fn build_mode(k: i64, point: &DispersionPoint, steady: &SteadyState, grid: &Arc<RadialGrid>) -> Result<RadialMode> {
    if k == 0 {
        return Err(Error::ZeroWavenumber);
    }
    let lambda0 = point.lambda0.ok_or(Error::MissingGrowthRate)?;
    let w = point.w.as_ref().ok_or(Error::MissingGrowthRate)?;
    check_same(grid, &steady.grid)?;
    if w.len() != grid.n {
        return Err(Error::GridMismatch(format!("mode has {} samples, grid {}", w.len(), grid.n)));
    }
    build_from_samples(k, lambda0, w.clone(), steady, grid)
}

/// Same as [`build_mode`] for a growth rate and `W` supplied directly.
pub fn build_from_samples(
    k: i64,
    lambda0: f64,
    w: DVector<f64>,
    steady: &SteadyState,
    grid: &Arc<RadialGrid>,
) -> Result<RadialMode> {
    if k == 0 {
        return Err(Error::ZeroWavenumber);
    }
    if !(lambda0 > 0.0) {
        return Err(Error::MissingGrowthRate);
    }
    let n = grid.n;
    let r = &grid.nodes;
    let mu = steady.params.mu;
    let kf = k as f64;
    let d: [DVector<f64>; 4] = [grid.d1() * &w, grid.d2() * &w, grid.d3() * &w, grid.d4() * &w];
    // w2 = -D(rW)/k and its derivatives by the product rule
    let w2 = DVector::from_fn(n, |i, _| -(w[i] + r[i] * d[0][i]) / kf);
    let dw2 = DVector::from_fn(n, |i, _| -(2.0 * d[0][i] + r[i] * d[1][i]) / kf);
    let d2w2 = DVector::from_fn(n, |i, _| -(3.0 * d[1][i] + r[i] * d[2][i]) / kf);
    let h1 = DVector::from_fn(n, |i, _| {
        let ri = r[i];
        let op = d2w2[i] + dw2[i] / ri - (kf * kf + 1.0) / (ri * ri) * w2[i] - lambda0 * steady.rho[i] / mu * w2[i];
        ri / kf * (2.0 * mu * kf * w[i] / (ri * ri) - mu * op)
    });
    let h2 = DVector::from_fn(n, |i, _| -w[i] * steady.drho[i] / lambda0);
    Ok(RadialMode { k, lambda0, w1: w, w2, h1, h2, grid: Arc::clone(grid), derivs: d })
}

fn l2(grid: &RadialGrid, f: &DVector<f64>) -> f64 {
    let sq: Vec<f64> = f.iter().map(|x| x * x).collect();
    grid.integrate(&sq).max(0.0).sqrt()
}

fn normalized(grid: &RadialGrid, terms: &[DVector<f64>]) -> f64 {
    let mut sum = DVector::zeros(grid.n);
    let mut scale = 0.0f64;
    for t in terms {
        sum += t;
        scale = scale.max(l2(grid, t));
    }
    if scale == 0.0 {
        0.0
    } else {
        l2(grid, &sum) / scale
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModeResidual {
    pub res1: f64,
    pub res2: f64,
    pub res_div: f64,
    pub res_transport: f64,
}

impl ModeResidual {
    pub fn max(&self) -> f64 {
        self.res1.max(self.res2).max(self.res_div).max(self.res_transport)
    }
}

/// Normalized `L^2` residuals of the two momentum lines, the divergence line
/// and the transport line of the mode system.
pub fn mode_residual(mode: &RadialMode, steady: &SteadyState, grid: &RadialGrid) -> Result<ModeResidual> {
    check_same(grid, &mode.grid)?;
    check_same(grid, &steady.grid)?;
    let n = grid.n;
    let r = &grid.nodes;
    let (mu, g, lam) = (steady.params.mu, steady.params.g, mode.lambda0);
    let kf = mode.k as f64;
    let k2 = kf * kf;
    let w = &mode.w1;
    let d = &mode.derivs;
    let rho = &steady.rho;
    let drho = &steady.drho;

    let dw2: Vec<f64> = (0..n).map(|i| -(2.0 * d[0][i] + r[i] * d[1][i]) / kf).collect();
    let d2w2: Vec<f64> = (0..n).map(|i| -(3.0 * d[1][i] + r[i] * d[2][i]) / kf).collect();
    let d3w2: Vec<f64> = (0..n).map(|i| -(4.0 * d[2][i] + r[i] * d[3][i]) / kf).collect();
    let w2 = &mode.w2;

    // first line: mu (L - lam rho/mu) w1 - 2 mu k w2 / r^2 - D h1 - g h2
    let visc1 = DVector::from_fn(n, |i, _| mu * (d[1][i] + d[0][i] / r[i] - (k2 + 1.0) / (r[i] * r[i]) * w[i]));
    let inertia1 = DVector::from_fn(n, |i, _| -lam * rho[i] * w[i]);
    let couple1 = DVector::from_fn(n, |i, _| -2.0 * mu * kf * w2[i] / (r[i] * r[i]));
    // D h1 with h1 = (r/k) X by the product rule
    let dh1 = DVector::from_fn(n, |i, _| {
        let ri = r[i];
        let x = 2.0 * mu * kf * w[i] / (ri * ri)
            - mu * (d2w2[i] + dw2[i] / ri - (k2 + 1.0) / (ri * ri) * w2[i])
            + lam * rho[i] * w2[i];
        let dx = 2.0 * mu * kf * (d[0][i] / (ri * ri) - 2.0 * w[i] / ri.powi(3))
            - mu * (d3w2[i] + d2w2[i] / ri - dw2[i] / (ri * ri) - (k2 + 1.0) * (dw2[i] / (ri * ri) - 2.0 * w2[i] / ri.powi(3)))
            + lam * (drho[i] * w2[i] + rho[i] * dw2[i]);
        -(x + ri * dx) / kf
    });
    let buoy = DVector::from_fn(n, |i, _| -g * mode.h2[i]);
    let res1 = normalized(grid, &[visc1, inertia1, couple1, dh1, buoy]);

    // second line: mu (L - lam rho/mu) w2 - 2 mu k w1 / r^2 + k h1 / r
    let visc2 = DVector::from_fn(n, |i, _| mu * (d2w2[i] + dw2[i] / r[i] - (k2 + 1.0) / (r[i] * r[i]) * w2[i]));
    let inertia2 = DVector::from_fn(n, |i, _| -lam * rho[i] * w2[i]);
    let couple2 = DVector::from_fn(n, |i, _| -2.0 * mu * kf * w[i] / (r[i] * r[i]));
    let press2 = DVector::from_fn(n, |i, _| kf * mode.h1[i] / r[i]);
    let res2 = normalized(grid, &[visc2, inertia2, couple2, press2]);

    // divergence with the plain differentiation matrix applied to r w1
    let rw = DVector::from_fn(n, |i, _| r[i] * w[i]);
    let div_a = grid.d1() * rw;
    let div_b = w2 * kf;
    let res_div = normalized(grid, &[div_a, div_b]);

    let tr_a = &mode.h2 * lam;
    let tr_b = DVector::from_fn(n, |i, _| w[i] * drho[i]);
    let res_transport = normalized(grid, &[tr_a, tr_b]);
    Ok(ModeResidual { res1, res2, res_div, res_transport })
}

/// `D^2(rW) - (1/r - alpha/mu) D(rW)` at `R1`, relative to `|D(rW)(R1)|`.
pub fn robin_residual(mode: &RadialMode, steady: &SteadyState) -> f64 {
    let r1 = mode.grid.nodes[0];
    let d = &mode.derivs;
    let drw = mode.w1[0] + r1 * d[0][0];
    let d2rw = 2.0 * d[0][0] + r1 * d[1][0];
    let res = d2rw - steady.params.robin() * drw;
    if drw == 0.0 {
        res.abs()
    } else {
        (res / drw).abs()
    }
}

impl RadialMode {
    /// Discrete `k w2 + D(r w1)` with the plain differentiation matrix.
    pub fn divergence_defect(&self) -> f64 {
        let r = &self.grid.nodes;
        let rw = DVector::from_fn(self.grid.n, |i, _| r[i] * self.w1[i]);
        let d = self.grid.d1() * rw;
        (0..self.grid.n).map(|i| (self.k as f64 * self.w2[i] + d[i]).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "r,w1,w2,h1,h2")?;
        for i in 0..self.grid.n {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt17(self.grid.nodes[i]),
                fmt17(self.w1[i]),
                fmt17(self.w2[i]),
                fmt17(self.h1[i]),
                fmt17(self.h2[i])
            )?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({ "k": self.k, "lambda0": self.lambda0, "n": self.grid.n })
    }
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    pub j: i64,
    pub coeffs: Vec<f64>,
    pub modes: Vec<RadialMode>,
    pub lambda_min: f64,
}

impl ModeSet {
    /// Modes must be ordered `j, j+1, ..` and share one grid.
    pub fn new(coeffs: Vec<f64>, modes: Vec<RadialMode>) -> Result<Self> {
        if modes.is_empty() || coeffs.len() != modes.len() {
            return Err(Error::OutOfRange(format!("{} coefficients for {} modes", coeffs.len(), modes.len())));
        }
        let j = modes[0].k;
        if j < 1 {
            return Err(Error::OutOfRange(format!("lowest wavenumber {j} must be positive")));
        }
        for (i, m) in modes.iter().enumerate() {
            if m.k != j + i as i64 {
                return Err(Error::OutOfRange(format!("wavenumbers must be consecutive from {j}")));
            }
            check_same(&m.grid, &modes[0].grid)?;
        }
        let lambda_min = modes.iter().map(|m| m.lambda0).fold(f64::INFINITY, f64::min);
        Ok(ModeSet { j, coeffs, modes, lambda_min })
    }

    /// Band `j .. j+N-1` taken from a sweep; every wavenumber must be unstable.
    pub fn from_curve(curve: &DispersionCurve, steady: &SteadyState, j: i64, count: usize, coeffs: Option<Vec<f64>>) -> Result<Self> {
        let coeffs = coeffs.unwrap_or_else(|| vec![1.0; count]);
        let mut modes = Vec::with_capacity(count);
        for k in j..j + count as i64 {
            let p = curve.point(k).ok_or_else(|| Error::OutOfRange(format!("k = {k} not in the sweep")))?;
            modes.push(build_mode(k, p, steady, &steady.grid)?);
        }
        ModeSet::new(coeffs, modes)
    }

    pub fn lambda_max(&self) -> f64 {
        self.modes.iter().map(|m| m.lambda0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn k_top(&self) -> i64 {
        self.j + self.modes.len() as i64 - 1
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.modes[0].grid
    }
}

#[derive(Debug, Clone)]
pub struct ModeBundle {
    pub vr: PolarField,
    pub vth: PolarField,
    pub p: PolarField,
    pub rho: PolarField,
}

impl ModeBundle {
    pub fn hq_norm(&self, q: usize) -> f64 {
        (self.vr.hq_norm_sq(q) + self.vth.hq_norm_sq(q) + self.p.hq_norm_sq(q) + self.rho.hq_norm_sq(q)).sqrt()
    }
}

fn cv(v: &DVector<f64>, s: Complex64) -> CVector {
    v.map(|x| s * x)
}

/// Superposed fields at time `t` as Fourier coefficients with `kmax`
/// (at least the top wavenumber of the set).
pub fn superpose_with(set: &ModeSet, t: f64, kmax: usize) -> Result<ModeBundle> {
    if (kmax as i64) < set.k_top() {
        return Err(Error::OutOfRange(format!("kmax {kmax} below top wavenumber {}", set.k_top())));
    }
    let grid = set.grid();
    for m in &set.modes {
        check_same(&m.grid, grid)?;
    }
    let mut b = ModeBundle {
        vr: PolarField::zeros(grid, kmax),
        vth: PolarField::zeros(grid, kmax),
        p: PolarField::zeros(grid, kmax),
        rho: PolarField::zeros(grid, kmax),
    };
    for (a, m) in set.coeffs.iter().zip(&set.modes) {
        let amp = a * (m.lambda0 * t).exp() / 2.0;
        let re = Complex64::new(amp, 0.0);
        b.vr.set_mode(m.k, cv(&m.w1, re));
        // sin(k theta) has coefficient 1/(2i) at +k
        b.vth.set_mode(m.k, cv(&m.w2, Complex64::new(0.0, -amp)));
        b.p.set_mode(m.k, cv(&m.h1, re));
        b.rho.set_mode(m.k, cv(&m.h2, re));
    }
    Ok(b)
}

pub fn superpose(set: &ModeSet, t: f64) -> Result<ModeBundle> {
    superpose_with(set, t, set.k_top() as usize)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub q: usize,
    pub lower_rate: f64,
    pub upper_rate: f64,
    pub initial_norm: f64,
    /// `(t, lower, norm, upper)` per sampled time.
    pub samples: Vec<(f64, f64, f64, f64)>,
    /// Largest relative violation of either bound.
    pub max_violation: f64,
}

/// Checks `e^{lambda_min t} |X(0)| <= |X(t)| <= e^{upper t} |X(0)|` in the
/// discrete `H^q` norm, with `upper` the largest rate of the set unless given.
pub fn growth_envelope_check(set: &ModeSet, times: &[f64], q: usize, upper_rate: Option<f64>) -> Result<EnvelopeReport> {
    let upper = upper_rate.unwrap_or_else(|| set.lambda_max());
    let x0 = superpose(set, 0.0)?.hq_norm(q);
    let mut samples = Vec::with_capacity(times.len());
    let mut worst = 0.0f64;
    for &t in times {
        let xt = superpose(set, t)?.hq_norm(q);
        let lo = (set.lambda_min * t).exp() * x0;
        let hi = (upper * t).exp() * x0;
        let scale = xt.max(f64::MIN_POSITIVE);
        worst = worst.max((lo - xt) / scale).max((xt - hi) / scale);
        samples.push((t, lo, xt, hi));
    }
    Ok(EnvelopeReport { q, lower_rate: set.lambda_min, upper_rate: upper, initial_norm: x0, samples, max_violation: worst.max(0.0) })
}
