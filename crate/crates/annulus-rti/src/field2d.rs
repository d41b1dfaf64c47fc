//! Fields on the annulus stored as Fourier series in theta with radial
//! coefficient vectors, together with the polar differential operators, the
//! Leray projection, a mode-wise Stokes solver and the Stokes eigenpairs.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::dispersion::FormCores;
use crate::error::{Error, Result};
use crate::linalg::{eigen_sorted, gram, symmetrize, Reducer};
use crate::parallel::pool;
use crate::profiles::PhysParams;
use crate::radial_ops::{build_trial_space, RadialGrid};

pub type CVector = DVector<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn cplx(v: &DVector<f64>) -> CVector {
    v.map(|x| Complex64::new(x, 0.0))
}

fn real_mul(m: &DMatrix<f64>, v: &CVector) -> CVector {
    let re = m * v.map(|z| z.re);
    let im = m * v.map(|z| z.im);
    CVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
}

/// `D(r f)` through the product rule, exact for grid polynomials.
pub fn d_r_times(grid: &RadialGrid, f: &CVector) -> CVector {
    let d = real_mul(grid.d1(), f);
    CVector::from_fn(grid.n, |i, _| f[i] + grid.nodes[i] * d[i])
}

/// `I + diag(r) D1` as a matrix.
pub fn d_r_matrix(grid: &RadialGrid) -> DMatrix<f64> {
    let mut m = grid.d1().clone();
    for i in 0..grid.n {
        for j in 0..grid.n {
            m[(i, j)] *= grid.nodes[i];
        }
        m[(i, i)] += 1.0;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    /// `dr dtheta`
    Plain,
    /// `r dr dtheta`
    Radius,
}

/// Real field `f(r, theta) = sum_k f_k(r) e^{i k theta}`, `|k| <= kmax`.
#[derive(Debug, Clone)]
pub struct PolarField {
    pub kmax: usize,
    pub grid: Arc<RadialGrid>,
    /// Index `k + kmax`.
    pub coeffs: Vec<CVector>,
}

impl PolarField {
    pub fn zeros(grid: &Arc<RadialGrid>, kmax: usize) -> Self {
        Self { kmax, grid: Arc::clone(grid), coeffs: vec![CVector::zeros(grid.n); 2 * kmax + 1] }
    }

    pub fn mode(&self, k: i64) -> &CVector {
        &self.coeffs[(k + self.kmax as i64) as usize]
    }

    pub fn mode_mut(&mut self, k: i64) -> &mut CVector {
        &mut self.coeffs[(k + self.kmax as i64) as usize]
    }

    /// Sets mode `k` and its conjugate partner at `-k`.
    pub fn set_mode(&mut self, k: i64, v: CVector) {
        if k == 0 {
            *self.mode_mut(0) = v.map(|z| Complex64::new(z.re, 0.0));
        } else {
            *self.mode_mut(-k) = v.map(|z| z.conj());
            *self.mode_mut(k) = v;
        }
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> {
        let k = self.kmax as i64;
        -k..=k
    }

    /// Largest violation of `f_{-k} = conj(f_k)`.
    pub fn reality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..=self.kmax as i64 {
            let a = self.mode(k);
            let b = self.mode(-k);
            for i in 0..a.len() {
                worst = worst.max((a[i] - b[i].conj()).norm());
            }
        }
        worst
    }

    pub fn check_grid(&self, other: &PolarField) -> Result<()> {
        if !self.grid.same_as(&other.grid) || self.kmax != other.kmax {
            return Err(Error::GridMismatch(format!(
                "(n = {}, K = {}) vs (n = {}, K = {})",
                self.grid.n, self.kmax, other.grid.n, other.kmax
            )));
        }
        Ok(())
    }

    pub fn map_modes<F: Fn(i64, &CVector) -> CVector>(&self, f: F) -> PolarField {
        let coeffs = self.wavenumbers().zip(self.coeffs.iter()).map(|(k, v)| f(k, v)).collect();
        PolarField { kmax: self.kmax, grid: Arc::clone(&self.grid), coeffs }
    }

    pub fn scale(&self, s: f64) -> PolarField {
        self.map_modes(|_, v| v * Complex64::new(s, 0.0))
    }

    pub fn add(&self, other: &PolarField) -> Result<PolarField> {
        self.check_grid(other)?;
        Ok(self.map_modes(|k, v| v + other.mode(k)))
    }

    pub fn sub(&self, other: &PolarField) -> Result<PolarField> {
        self.check_grid(other)?;
        Ok(self.map_modes(|k, v| v - other.mode(k)))
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().flat_map(|v| v.iter()).fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn dr(&self) -> PolarField {
        self.map_modes(|_, v| real_mul(self.grid.d1(), v))
    }

    pub fn dtheta(&self) -> PolarField {
        self.map_modes(|k, v| v * (I * k as f64))
    }

    pub fn div_r(&self) -> PolarField {
        let r = &self.grid.nodes;
        self.map_modes(|_, v| CVector::from_fn(v.len(), |i, _| v[i] / r[i]))
    }

    /// Rotation `f(theta) -> f(theta - phi)`.
    pub fn rotate(&self, phi: f64) -> PolarField {
        self.map_modes(|k, v| v * Complex64::from_polar(1.0, -(k as f64) * phi))
    }

    /// `int int w |f|^2` with the radial integral taken on the refined
    /// quadrature of the grid interpolant.
    pub fn norm_sq(&self, weight: Weight) -> f64 {
        2.0 * PI * self.coeffs.iter().map(|v| radial_norm_sq(&self.grid, v, weight)).sum::<f64>()
    }

    pub fn norm(&self, weight: Weight) -> f64 {
        self.norm_sq(weight).sqrt()
    }

    /// Real inner product `int int w f g`.
    pub fn inner(&self, other: &PolarField, weight: Weight) -> Result<f64> {
        self.check_grid(other)?;
        let mut acc = 0.0;
        for k in self.wavenumbers() {
            acc += radial_inner(&self.grid, self.mode(k), other.mode(k), weight).re;
        }
        Ok(2.0 * PI * acc)
    }

    /// Sum of squared unweighted `L^2` norms of all derivatives
    /// `d_r^a d_theta^b f` with `a + b <= q`.
    pub fn hq_norm_sq(&self, q: usize) -> f64 {
        let mut total = 0.0;
        let mut by_r = self.clone();
        for a in 0..=q {
            let mut g = by_r.clone();
            for b in 0..=(q - a) {
                total += g.norm_sq(Weight::Plain);
                if b < q - a {
                    g = g.dtheta();
                }
            }
            if a < q {
                by_r = by_r.dr();
            }
        }
        total
    }

    /// Samples on the radial nodes times `m` equispaced angles, `theta_j = 2 pi j / m`.
    pub fn to_physical(&self, tf: &FourierTransform) -> DMatrix<f64> {
        let n = self.grid.n;
        let m = tf.m;
        let mut out = DMatrix::<f64>::zeros(n, m);
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..n {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for k in self.wavenumbers() {
                if (k.unsigned_abs() as usize) <= tf.kmax_alias_free() {
                    let idx = k.rem_euclid(m as i64) as usize;
                    buf[idx] += self.mode(k)[i];
                }
            }
            tf.inverse.process(&mut buf);
            for j in 0..m {
                out[(i, j)] = buf[j].re;
            }
        }
        out
    }

    /// Inverse of [`PolarField::to_physical`] truncated to `|k| <= kmax`.
    pub fn from_physical(grid: &Arc<RadialGrid>, kmax: usize, values: &DMatrix<f64>, tf: &FourierTransform) -> Self {
        let m = tf.m;
        let mut f = PolarField::zeros(grid, kmax);
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..grid.n {
            for j in 0..m {
                buf[j] = Complex64::new(values[(i, j)], 0.0);
            }
            tf.forward.process(&mut buf);
            for k in 0..=(kmax.min(m / 2)) as i64 {
                let mut z = buf[k as usize] / m as f64;
                if 2 * k as usize == m {
                    z = Complex64::new(z.re * 0.5, 0.0);
                }
                f.mode_mut(k)[i] = if k == 0 { Complex64::new(z.re, 0.0) } else { z };
                if k > 0 {
                    f.mode_mut(-k)[i] = z.conj();
                }
            }
        }
        f
    }

    /// Builds a field by sampling a function of `(r, theta)`.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: &Arc<RadialGrid>, kmax: usize, f: F) -> Self {
        let tf = FourierTransform::new(4 * kmax + 4);
        let vals = DMatrix::from_fn(grid.n, tf.m, |i, j| f(grid.nodes[i], tf.theta(j)));
        Self::from_physical(grid, kmax, &vals, &tf)
    }

    /// Value at a radial node and arbitrary angle.
    pub fn eval_at_node(&self, i: usize, theta: f64) -> f64 {
        let mut acc = 0.0;
        for k in self.wavenumbers() {
            acc += (self.mode(k)[i] * Complex64::from_polar(1.0, k as f64 * theta)).re;
        }
        acc
    }
}

/// `int w |f|^2 dr` on the refined quadrature.
pub fn radial_norm_sq(grid: &RadialGrid, v: &CVector, weight: Weight) -> f64 {
    radial_inner(grid, v, v, weight).re
}

/// `int w conj(a) b dr` on the refined quadrature.
pub fn radial_inner(grid: &RadialGrid, a: &CVector, b: &CVector, weight: Weight) -> Complex64 {
    let fine = grid.fine();
    let fa = real_mul(&fine.interp, a);
    let fb = real_mul(&fine.interp, b);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..fine.w.len() {
        let w = match weight {
            Weight::Plain => fine.w[i],
            Weight::Radius => fine.w[i] * fine.nodes[i],
        };
        acc += fa[i].conj() * fb[i] * w;
    }
    acc
}

/// FFT plans for `m` equispaced angles.
pub struct FourierTransform {
    pub m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FourierTransform(m = {})", self.m)
    }
}

impl FourierTransform {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { m, forward: planner.plan_fft_forward(m), inverse: planner.plan_fft_inverse(m) }
    }

    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.m as f64
    }

    fn kmax_alias_free(&self) -> usize {
        (self.m - 1) / 2
    }
}

#[derive(Debug, Clone)]
pub struct VelocityField {
    pub vr: PolarField,
    pub vth: PolarField,
}

impl VelocityField {
    pub fn zeros(grid: &Arc<RadialGrid>, kmax: usize) -> Self {
        Self { vr: PolarField::zeros(grid, kmax), vth: PolarField::zeros(grid, kmax) }
    }

    pub fn new(vr: PolarField, vth: PolarField) -> Result<Self> {
        vr.check_grid(&vth)?;
        Ok(Self { vr, vth })
    }

    pub fn norm_sq(&self, weight: Weight) -> f64 {
        self.vr.norm_sq(weight) + self.vth.norm_sq(weight)
    }

    pub fn norm(&self, weight: Weight) -> f64 {
        self.norm_sq(weight).sqrt()
    }

    pub fn inner(&self, other: &VelocityField, weight: Weight) -> Result<f64> {
        Ok(self.vr.inner(&other.vr, weight)? + self.vth.inner(&other.vth, weight)?)
    }

    pub fn sub(&self, other: &VelocityField) -> Result<VelocityField> {
        Ok(VelocityField { vr: self.vr.sub(&other.vr)?, vth: self.vth.sub(&other.vth)? })
    }

    pub fn add(&self, other: &VelocityField) -> Result<VelocityField> {
        Ok(VelocityField { vr: self.vr.add(&other.vr)?, vth: self.vth.add(&other.vth)? })
    }

    pub fn scale(&self, s: f64) -> VelocityField {
        VelocityField { vr: self.vr.scale(s), vth: self.vth.scale(s) }
    }

    pub fn rotate(&self, phi: f64) -> VelocityField {
        VelocityField { vr: self.vr.rotate(phi), vth: self.vth.rotate(phi) }
    }

    /// Largest coefficient of `d_r(r v_r) + d_theta v_theta`.
    pub fn divergence_defect(&self) -> f64 {
        divergence(self).map(|d| d.max_coeff()).unwrap_or(f64::INFINITY)
    }

    /// Largest of `|v_r(R1)|, |v_r(R2)|, |v_theta(R2)|` over all modes.
    pub fn boundary_defect(&self) -> f64 {
        let n = self.vr.grid.n;
        let mut worst = 0.0f64;
        for k in self.vr.wavenumbers() {
            worst = worst.max(self.vr.mode(k)[0].norm()).max(self.vr.mode(k)[n - 1].norm());
            worst = worst.max(self.vth.mode(k)[n - 1].norm());
        }
        worst
    }

    /// Largest violation of `d_r v_theta = (1/r - alpha/mu) v_theta` at `R1`.
    pub fn robin_defect(&self, params: &PhysParams) -> f64 {
        let d = self.vth.dr();
        let robin = params.robin();
        self.vth.wavenumbers().map(|k| (d.mode(k)[0] - self.vth.mode(k)[0] * robin).norm()).fold(0.0, f64::max)
    }

    /// `int int r v_r dr dtheta`.
    pub fn radial_flux(&self) -> f64 {
        let ones = CVector::from_element(self.vr.grid.n, Complex64::new(1.0, 0.0));
        2.0 * PI * radial_inner(&self.vr.grid, &ones, self.vr.mode(0), Weight::Radius).re
    }

    /// `int int (|d_r V|^2 + |d_theta V|^2) dr dtheta`.
    pub fn grad_norm_sq(&self) -> f64 {
        self.vr.dr().norm_sq(Weight::Plain)
            + self.vr.dtheta().norm_sq(Weight::Plain)
            + self.vth.dr().norm_sq(Weight::Plain)
            + self.vth.dtheta().norm_sq(Weight::Plain)
    }

    /// The equivalent energy `F1(V)`.
    pub fn f1_energy(&self) -> f64 {
        let a = self.vr.dr().norm_sq(Weight::Radius) + self.vth.dr().norm_sq(Weight::Radius);
        let s1 = self.vr.dtheta().sub(&self.vth).expect("same grid");
        let s2 = self.vth.dtheta().add(&self.vr).expect("same grid");
        let b = s1.div_r().inner(&s1, Weight::Plain).expect("same grid")
            + s2.div_r().inner(&s2, Weight::Plain).expect("same grid");
        a + b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Grad,
    Div,
    VectorLaplacian,
}

impl Operator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Operator::Grad),
            "div" => Ok(Operator::Div),
            "vector_laplacian" => Ok(Operator::VectorLaplacian),
            other => Err(Error::Config(format!("unknown operator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum OperatorInput<'a> {
    Scalar(&'a PolarField),
    Vector(&'a VelocityField),
}

#[derive(Debug, Clone)]
pub enum OperatorOutput {
    Scalar(PolarField),
    Vector(VelocityField),
}

pub fn apply_operator(op: Operator, input: OperatorInput<'_>) -> Result<OperatorOutput> {
    match (op, input) {
        (Operator::Grad, OperatorInput::Scalar(p)) => Ok(OperatorOutput::Vector(gradient(p))),
        (Operator::Div, OperatorInput::Vector(v)) => Ok(OperatorOutput::Scalar(divergence(v)?)),
        (Operator::VectorLaplacian, OperatorInput::Vector(v)) => Ok(OperatorOutput::Vector(vector_laplacian(v)?)),
        (op, _) => Err(Error::Config(format!("operator {op:?} applied to the wrong kind of field"))),
    }
}

/// `(d_r p, (1/r) d_theta p)`.
pub fn gradient(p: &PolarField) -> VelocityField {
    VelocityField { vr: p.dr(), vth: p.dtheta().div_r() }
}

/// `d_r(r v_r) + d_theta v_theta`.
pub fn divergence(v: &VelocityField) -> Result<PolarField> {
    v.vr.check_grid(&v.vth)?;
    let grid = &v.vr.grid;
    Ok(v.vr.map_modes(|k, a| d_r_times(grid, a) + v.vth.mode(k) * (I * k as f64)))
}

/// `Delta_r v_r - v_r/r^2 - (2/r^2) d_theta v_theta` and its companion, with
/// `Delta_r = d_rr + (1/r) d_r + (1/r^2) d_thetatheta`.
pub fn vector_laplacian(v: &VelocityField) -> Result<VelocityField> {
    v.vr.check_grid(&v.vth)?;
    let grid = Arc::clone(&v.vr.grid);
    let r = &grid.nodes;
    let lap = |k: i64, f: &CVector| -> CVector {
        let d1 = real_mul(grid.d1(), f);
        let d2 = real_mul(grid.d2(), f);
        let k2 = (k * k) as f64;
        CVector::from_fn(f.len(), |i, _| d2[i] + d1[i] / r[i] - f[i] * ((k2 + 1.0) / (r[i] * r[i])))
    };
    let vr = v.vr.map_modes(|k, a| {
        let b = v.vth.mode(k);
        let l = lap(k, a);
        CVector::from_fn(a.len(), |i, _| l[i] - b[i] * (I * (2.0 * k as f64) / (r[i] * r[i])))
    });
    let vth = v.vth.map_modes(|k, b| {
        let a = v.vr.mode(k);
        let l = lap(k, b);
        CVector::from_fn(b.len(), |i, _| l[i] + a[i] * (I * (2.0 * k as f64) / (r[i] * r[i])))
    });
    Ok(VelocityField { vr, vth })
}

/// Orthogonal projection, in `int int r (.)`, onto divergence-free fields with
/// `v_r = 0` on both walls, plus the pressure of the Neumann problem.
#[derive(Debug, Clone)]
pub struct LerayProjector {
    grid: Arc<RadialGrid>,
    kmax: usize,
    /// Interior-node selection interpolated to the refined quadrature.
    ef: DMatrix<f64>,
    /// `D(r E)` interpolated to the refined quadrature.
    drf: DMatrix<f64>,
    dr_e: DMatrix<f64>,
    wr: DVector<f64>,
    /// Cholesky factors of the normal matrices, index `|k| - 1`.
    chol: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl LerayProjector {
    pub fn new(grid: &Arc<RadialGrid>, kmax: usize) -> Result<Self> {
        let n = grid.n;
        let fine = grid.fine();
        let e = DMatrix::from_fn(n, n - 2, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        let dr_e = d_r_matrix(grid) * &e;
        let ef = &fine.interp * &e;
        let drf = &fine.interp * &dr_e;
        let wr = fine.w.component_mul(&fine.nodes);
        let a = gram(&ef, &wr);
        let b = gram(&drf, &wr);
        let mut chol = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let mut m = &a + &b / (k * k) as f64;
            symmetrize(&mut m);
            chol.push(m.cholesky().ok_or(Error::NonSpd("Leray normal matrix"))?);
        }
        Ok(Self { grid: Arc::clone(grid), kmax, ef, drf, dr_e, wr, chol })
    }

    /// Divergence-free part of mode `k` of `(f1, f2)`.
    pub fn project_mode(&self, k: i64, f1: &CVector, f2: &CVector) -> (CVector, CVector) {
        let n = self.grid.n;
        if k == 0 {
            return (CVector::zeros(n), f2.clone());
        }
        let kf = k as f64;
        let fine = self.grid.fine();
        let g1 = real_mul(&fine.interp, f1).component_mul(&cplx(&self.wr));
        let g2 = real_mul(&fine.interp, f2).component_mul(&cplx(&self.wr));
        let rhs = real_mul(&self.ef.transpose(), &g1) + real_mul(&self.drf.transpose(), &g2) * (-I / kf);
        let chol = &self.chol[k.unsigned_abs() as usize - 1];
        let re = chol.solve(&rhs.map(|z| z.re));
        let im = chol.solve(&rhs.map(|z| z.im));
        let alpha = CVector::from_fn(n - 2, |i, _| Complex64::new(re[i], im[i]));
        let mut a = CVector::zeros(n);
        for i in 0..n - 2 {
            a[i + 1] = alpha[i];
        }
        let b = real_mul(&self.dr_e, &alpha) * (I / kf);
        (a, b)
    }

    pub fn project(&self, f: &VelocityField) -> Result<(VelocityField, PolarField)> {
        if f.vr.kmax > self.kmax || !f.vr.grid.same_as(&self.grid) {
            return Err(Error::GridMismatch("projector built for a different grid".into()));
        }
        f.vr.check_grid(&f.vth)?;
        let mut out = VelocityField::zeros(&f.vr.grid, f.vr.kmax);
        let mut p = PolarField::zeros(&f.vr.grid, f.vr.kmax);
        for k in 0..=f.vr.kmax as i64 {
            let (a, b) = self.project_mode(k, f.vr.mode(k), f.vth.mode(k));
            out.vr.set_mode(k, a);
            out.vth.set_mode(k, b);
            p.set_mode(k, neumann_pressure(&self.grid, k, f.vr.mode(k), f.vth.mode(k))?);
        }
        Ok((out, p))
    }
}

pub fn leray_project(f: &VelocityField) -> Result<(VelocityField, PolarField)> {
    LerayProjector::new(&f.vr.grid, f.vr.kmax.max(1))?.project(f)
}

/// Solves `r p'' + p' - (k^2/r) p = D(r f1) + i k f2` with `p' = f1` on both
/// walls; for `k = 0` the solution is pinned by zero `r`-weighted mean.
pub fn neumann_pressure(grid: &RadialGrid, k: i64, f1: &CVector, f2: &CVector) -> Result<CVector> {
    let n = grid.n;
    let r = &grid.nodes;
    let scale = f1.iter().chain(f2.iter()).fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    if k == 0 {
        // compatibility: the quadrature must reproduce the boundary flux of r f1
        let div = d_r_times(grid, f1);
        let integral: Complex64 = grid.w.iter().zip(div.iter()).map(|(w, z)| z * *w).sum();
        let flux = f1[n - 1] * r[n - 1] - f1[0] * r[0];
        let defect = (integral - flux).norm() / (scale * r[n - 1]);
        if defect > 1e-6 {
            return Err(Error::SingularNeumann(defect));
        }
        // (r p')' = (r f1)' with matching fluxes gives p' = f1
        let re = grid.cumulative_integral(f1.map(|z| z.re).as_slice());
        let mut p = DVector::from_vec(re);
        let ones = DVector::from_element(n, 1.0);
        let wr = grid.w.component_mul(r);
        let mean = wr.dot(&p) / wr.dot(&ones);
        p.add_scalar_mut(-mean);
        return Ok(cplx(&p));
    }
    let k2 = (k * k) as f64;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = r[i] * grid.d2()[(i, j)] + grid.d1()[(i, j)];
        }
        a[(i, i)] -= k2 / r[i];
    }
    let mut rhs = d_r_times(grid, f1) + f2 * (I * k as f64);
    for (row, node) in [(0usize, 0usize), (n - 1, n - 1)] {
        for j in 0..n {
            a[(row, j)] = grid.d1()[(node, j)];
        }
        rhs[row] = f1[node];
    }
    let lu = a.lu();
    let re = lu.solve(&rhs.map(|z| z.re)).ok_or_else(|| Error::SingularSystem("Neumann problem".into()))?;
    let im = lu.solve(&rhs.map(|z| z.im)).ok_or_else(|| Error::SingularSystem("Neumann problem".into()))?;
    Ok(CVector::from_fn(n, |i, _| Complex64::new(re[i], im[i])))
}

/// Mode-wise direct solver for
/// `mu(vector Laplacian) V - grad p = f`, `div V = 0`, with the wall
/// conditions of the perturbation problem.
#[derive(Debug, Clone)]
pub struct StokesSolver {
    grid: Arc<RadialGrid>,
    params: PhysParams,
}

impl StokesSolver {
    pub fn new(grid: &Arc<RadialGrid>, params: &PhysParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { grid: Arc::clone(grid), params: *params })
    }

    fn solve_axisymmetric(&self, f1: &CVector, f2: &CVector) -> Result<(CVector, CVector, CVector)> {
        let g = &self.grid;
        let n = g.n;
        let r = &g.nodes;
        let mu = self.params.mu;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = mu * (g.d2()[(i, j)] + g.d1()[(i, j)] / r[i]);
            }
            a[(i, i)] -= mu / (r[i] * r[i]);
        }
        let mut rhs = f2.clone();
        for j in 0..n {
            a[(0, j)] = g.d1()[(0, j)];
            a[(n - 1, j)] = 0.0;
        }
        a[(0, 0)] -= self.params.robin();
        a[(n - 1, n - 1)] = 1.0;
        rhs[0] = Complex64::new(0.0, 0.0);
        rhs[n - 1] = Complex64::new(0.0, 0.0);
        let b = complex_solve(a.map(|x| Complex64::new(x, 0.0)), rhs, "axisymmetric Stokes")?;
        let minus_f1 = -f1.map(|z| z.re);
        let pr = g.cumulative_integral(minus_f1.as_slice());
        let mut p = DVector::from_vec(pr);
        let wr = g.w.component_mul(r);
        let mean = wr.dot(&p) / wr.sum();
        p.add_scalar_mut(-mean);
        Ok((CVector::zeros(n), b, cplx(&p)))
    }

    /// One Fourier mode; returns `(v_r, v_theta, p)`.
    pub fn solve_mode(&self, k: i64, f1: &CVector, f2: &CVector) -> Result<(CVector, CVector, CVector)> {
        if k == 0 {
            return self.solve_axisymmetric(f1, f2);
        }
        let g = &self.grid;
        let n = g.n;
        let r = &g.nodes;
        let mu = self.params.mu;
        let kf = k as f64;
        let ik = I * kf;
        let c = |x: f64| Complex64::new(x, 0.0);
        let dr = d_r_matrix(g).map(c);
        let d1 = g.d1().map(c);
        let d2 = g.d2().map(c);
        let ri = DMatrix::from_fn(n, n, |i, j| if i == j { c(1.0 / r[i]) } else { c(0.0) });
        let ri2 = &ri * &ri;
        let rr = DMatrix::from_fn(n, n, |i, j| if i == j { c(r[i]) } else { c(0.0) });
        // L - 1/r^2 with L = D^2 + D/r - k^2/r^2
        let lm = &d2 + &ri * &d1 - &ri2 * c(kf * kf + 1.0);
        // X = Xa a - f2 is the theta-momentum without the pressure; p = r X / (ik)
        let xa = (&lm * &dr) * (c(mu) * I / kf) + &ri2 * (c(2.0 * mu) * ik);
        let mut op = &lm * c(mu) + (&ri2 * &dr) * c(2.0 * mu) - (&dr * &xa) / ik;
        let mut rhs = f1 - real_mul(&d_r_matrix(g), f2) / ik;
        let robin = self.params.robin();
        let d2r = DMatrix::from_fn(n, n, |i, j| 2.0 * g.d1()[(i, j)] + r[i] * g.d2()[(i, j)]);
        let drr = d_r_matrix(g);
        for j in 0..n {
            op[(0, j)] = c(if j == 0 { 1.0 } else { 0.0 });
            op[(n - 1, j)] = c(if j == n - 1 { 1.0 } else { 0.0 });
            op[(n - 2, j)] = c(g.d1()[(n - 1, j)]);
            op[(1, j)] = c(d2r[(0, j)] - robin * drr[(0, j)]);
        }
        for row in [0, 1, n - 2, n - 1] {
            rhs[row] = c(0.0);
        }
        let a = complex_solve(op, rhs, "Stokes mode")?;
        let b = &dr * &a * (I / kf);
        let x = &xa * &a - f2;
        let p = (&rr * x) / ik;
        Ok((a, b, p))
    }

    pub fn solve(&self, f: &VelocityField) -> Result<(VelocityField, PolarField)> {
        f.vr.check_grid(&f.vth)?;
        if !f.vr.grid.same_as(&self.grid) {
            return Err(Error::GridMismatch("Stokes solver built for a different grid".into()));
        }
        let kmax = f.vr.kmax;
        let modes: Vec<Result<(CVector, CVector, CVector)>> = pool().install(|| {
            (0..=kmax as i64).into_par_iter().map(|k| self.solve_mode(k, f.vr.mode(k), f.vth.mode(k))).collect()
        });
        let mut v = VelocityField::zeros(&self.grid, kmax);
        let mut p = PolarField::zeros(&self.grid, kmax);
        for (k, m) in modes.into_iter().enumerate() {
            let (a, b, q) = m?;
            v.vr.set_mode(k as i64, a);
            v.vth.set_mode(k as i64, b);
            p.set_mode(k as i64, q);
        }
        Ok((v, p))
    }
}

pub fn stokes_solve(f: &VelocityField, params: &PhysParams) -> Result<(VelocityField, PolarField)> {
    StokesSolver::new(&f.vr.grid, params)?.solve(f)
}

fn complex_solve(a: DMatrix<Complex64>, b: CVector, what: &str) -> Result<CVector> {
    let x = a.lu().solve(&b).ok_or_else(|| Error::SingularSystem(what.into()))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem(what.into()));
    }
    Ok(x)
}

/// Residuals of the Stokes system for a computed `(V, p)`, each relative to
/// its largest term: `(radial momentum, azimuthal momentum, divergence)`.
pub fn stokes_residual(v: &VelocityField, p: &PolarField, f: &VelocityField, mu: f64) -> Result<(f64, f64, f64)> {
    let lap = vector_laplacian(v)?;
    let gp = gradient(p);
    let rel = |a: &PolarField, b: &PolarField, c: &PolarField| -> f64 {
        let res = a.scale(mu).sub(b).and_then(|x| x.sub(c)).map(|x| x.norm(Weight::Plain)).unwrap_or(f64::NAN);
        let scale = a.scale(mu).norm(Weight::Plain).max(b.norm(Weight::Plain)).max(c.norm(Weight::Plain));
        if scale == 0.0 {
            res
        } else {
            res / scale
        }
    };
    let div = divergence(v)?;
    let dscale = v.vr.norm(Weight::Plain).max(v.vth.norm(Weight::Plain)).max(1e-300);
    Ok((rel(&lap.vr, &gp.vr, &f.vr), rel(&lap.vth, &gp.vth, &f.vth), div.norm(Weight::Plain) / dscale))
}

/// Empirical Stokes-estimate ratio
/// `(|d^2 V| + |grad p|) / (|f| + |V|_{W^{1,2}})` in unweighted norms.
pub fn stokes_estimate_ratio(v: &VelocityField, p: &PolarField, f: &VelocityField) -> f64 {
    let second = |u: &PolarField| {
        let ur = u.dr();
        ur.dr().norm_sq(Weight::Plain) + 2.0 * ur.dtheta().norm_sq(Weight::Plain) + u.dtheta().dtheta().norm_sq(Weight::Plain)
    };
    let hess = (second(&v.vr) + second(&v.vth)).sqrt();
    let gp = (p.dr().norm_sq(Weight::Plain) + p.dtheta().norm_sq(Weight::Plain)).sqrt();
    let w12 = (v.norm_sq(Weight::Plain) + v.grad_norm_sq()).sqrt();
    (hess + gp) / (f.norm(Weight::Plain) + w12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Debug, Clone)]
pub struct StokesEigenpair {
    pub beta: f64,
    pub k: i64,
    pub parity: Parity,
    pub field: VelocityField,
}

fn axisymmetric_pencil(grid: &RadialGrid, params: &PhysParams) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = grid.n;
    let fine = grid.fine();
    let basis = DMatrix::from_fn(n, n - 1, |i, j| if i == j { 1.0 } else { 0.0 });
    let bf = &fine.interp * &basis;
    let dbf = &fine.interp * (grid.d1() * &basis);
    let wr = fine.w.component_mul(&fine.nodes);
    let w_over_r = fine.w.component_div(&fine.nodes);
    let mass = gram(&bf, &wr);
    let mut stiff = (gram(&dbf, &wr) + gram(&bf, &w_over_r)) * params.mu;
    stiff[(0, 0)] += params.mu * params.slip_weight();
    symmetrize(&mut stiff);
    Ok((stiff, mass, basis))
}

fn sorted_eigs(stiff: &DMatrix<f64>, mass: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let red = Reducer::new(mass, "Stokes mass")?;
    let (vals, vecs) = eigen_sorted(&red.reduce(stiff)?)?;
    let mut out = DMatrix::<f64>::zeros(mass.nrows(), vals.len());
    for j in 0..vals.len() {
        let x = red.back(&vecs.column(j).into_owned())?;
        out.set_column(j, &x);
    }
    Ok((vals, out))
}

/// The `m` smallest eigenvalues of the Stokes operator with their
/// eigenfields, normalized to `int int r |e|^2 = 1`. Degenerate `cos`/`sin`
/// pairs are listed separately. Fields carry Fourier modes up to `kmax`.
pub fn stokes_eigenpairs(grid: &Arc<RadialGrid>, params: &PhysParams, m: usize) -> Result<Vec<StokesEigenpair>> {
    if m == 0 {
        return Err(Error::OutOfRange("need at least one eigenpair".into()));
    }
    params.validate()?;
    let n = grid.n;
    let space = Arc::new(build_trial_space(grid)?);
    let cores = FormCores::with_density(&space, params, 0.0, |_| (1.0, 0.0))?;
    let mut cands: Vec<(f64, i64, usize, DVector<f64>)> = Vec::new();
    let (s0, m0, _) = axisymmetric_pencil(grid, params)?;
    let (v0, x0) = sorted_eigs(&s0, &m0)?;
    for j in 0..v0.len().min(m) {
        cands.push((v0[j], 0, j, x0.column(j).into_owned()));
    }
    let mut k = 1i64;
    loop {
        let forms = cores.forms(k as f64)?;
        let (vals, vecs) = sorted_eigs(&(&forms.m2 * params.mu), &forms.m1)?;
        for j in 0..vals.len().min(m) {
            cands.push((vals[j], k, j, vecs.column(j).into_owned()));
        }
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut count = 0usize;
        let mut mth = f64::INFINITY;
        for c in &cands {
            count += if c.1 == 0 { 1 } else { 2 };
            if count >= m {
                mth = c.0;
                break;
            }
        }
        if vals[0] > mth || k as usize > 4 * n {
            break;
        }
        k += 1;
    }
    let kmax = k.max(1) as usize;
    let mut out = Vec::with_capacity(m);
    for (beta, k, _, x) in cands {
        if out.len() >= m {
            break;
        }
        if k == 0 {
            let mut b = DVector::zeros(n);
            for i in 0..n - 1 {
                b[i] = x[i];
            }
            let nrm = (2.0 * PI * quad_form(&x, &m0)).sqrt();
            let mut f = VelocityField::zeros(grid, kmax);
            f.vth.set_mode(0, cplx(&(b / nrm)));
            out.push(StokesEigenpair { beta, k, parity: Parity::Cos, field: f });
            continue;
        }
        let kf = k as f64;
        let forms = cores.forms(kf)?;
        let nrm = (PI * quad_form(&x, &forms.m1) / (kf * kf)).sqrt();
        let w = space.expand(&x) / nrm;
        let drw = d_r_times(grid, &cplx(&w)).map(|z| z.re);
        for parity in [Parity::Cos, Parity::Sin] {
            if out.len() >= m {
                break;
            }
            let mut f = VelocityField::zeros(grid, kmax);
            match parity {
                Parity::Cos => {
                    f.vr.set_mode(k, cplx(&(&w * 0.5)));
                    f.vth.set_mode(k, cplx(&drw).map(|z| z * I / (2.0 * kf)));
                }
                Parity::Sin => {
                    f.vr.set_mode(k, cplx(&w).map(|z| z * (-I * 0.5)));
                    f.vth.set_mode(k, cplx(&(&drw / (2.0 * kf))));
                }
            }
            out.push(StokesEigenpair { beta, k, parity, field: f });
        }
    }
    Ok(out)
}

fn quad_form(x: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

pub const SNAPSHOT_MAGIC: &[u8; 5] = b"ANNF1";

/// Writes up to four fields on a common grid; tags are padded or cut to
/// four bytes.
pub fn write_snapshot(path: &Path, time: f64, fields: &[(&str, &PolarField)]) -> Result<()> {
    if fields.is_empty() || fields.len() > 4 {
        return Err(Error::OutOfRange("a snapshot holds one to four fields".into()));
    }
    let first = fields[0].1;
    for (_, f) in fields {
        first.check_grid(f)?;
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(first.grid.n as u32).to_le_bytes());
    buf.extend_from_slice(&(first.kmax as u32).to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for slot in 0..4 {
        let mut tag = [b' '; 4];
        if let Some((name, _)) = fields.get(slot) {
            for (t, b) in tag.iter_mut().zip(name.bytes()) {
                *t = b;
            }
        }
        buf.extend_from_slice(&tag);
    }
    for (_, f) in fields {
        for v in &f.coeffs {
            for z in v.iter() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub n: usize,
    pub kmax: usize,
    pub time: f64,
    pub tags: Vec<String>,
    /// Coefficients per field, ordered by `k = -K..K` then radius.
    pub data: Vec<Vec<Vec<Complex64>>>,
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |what: &str| Error::Config(format!("malformed snapshot: {what}"));
    if bytes.len() < 37 || &bytes[0..5] != SNAPSHOT_MAGIC {
        return Err(bad("magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let n = u32_at(5);
    let kmax = u32_at(9);
    let time = f64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let mut tags = Vec::new();
    for s in 0..4 {
        let t = String::from_utf8_lossy(&bytes[21 + 4 * s..25 + 4 * s]).trim_end().to_string();
        if !t.is_empty() {
            tags.push(t);
        }
    }
    let per_field = (2 * kmax + 1) * n * 16;
    if bytes.len() != 37 + per_field * tags.len() {
        return Err(bad("length"));
    }
    let mut data = Vec::new();
    let mut o = 37;
    for _ in 0..tags.len() {
        let mut field = Vec::with_capacity(2 * kmax + 1);
        for _ in 0..2 * kmax + 1 {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let re = f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
                let im = f64::from_le_bytes(bytes[o + 8..o + 16].try_into().unwrap());
                v.push(Complex64::new(re, im));
                o += 16;
            }
            field.push(v);
        }
        data.push(field);
    }
    Ok(Snapshot { n, kmax, time, tags, data })
}

impl Snapshot {
    pub fn field(&self, tag: &str, grid: &Arc<RadialGrid>) -> Result<PolarField> {
        if grid.n != self.n {
            return Err(Error::GridMismatch(format!("snapshot has n = {}, grid has n = {}", self.n, grid.n)));
        }
        let idx = self
            .tags
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::Config(format!("snapshot has no field `{tag}`")))?;
        let coeffs = self.data[idx].iter().map(|v| CVector::from_column_slice(v)).collect();
        Ok(PolarField { kmax: self.kmax, grid: Arc::clone(grid), coeffs })
    }
}

/// Physical samples on the radial nodes times `m_theta` angles, one row per
/// lattice point: `r,theta,<field names...>`.
pub fn write_lattice_csv(path: &Path, m_theta: usize, fields: &[(&str, &PolarField)]) -> Result<()> {
    if fields.is_empty() {
        return Err(Error::OutOfRange("nothing to export".into()));
    }
    let first = fields[0].1;
    for (_, f) in fields {
        first.check_grid(f)?;
    }
    let tf = FourierTransform::new(m_theta);
    let vals: Vec<DMatrix<f64>> = fields.iter().map(|(_, f)| f.to_physical(&tf)).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["r".to_string(), "theta".to_string()];
    header.extend(fields.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for i in 0..first.grid.n {
        for j in 0..m_theta {
            let mut rec = vec![fmt17(first.grid.nodes[i]), fmt17(tf.theta(j))];
            rec.extend(vals.iter().map(|v| fmt17(v[(i, j)])));
            w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Seventeen significant digits, enough to round-trip a double.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        format!("{x}")
    }
}
