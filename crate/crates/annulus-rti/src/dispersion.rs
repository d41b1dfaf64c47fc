//! Quadratic forms of the radial eigenvalue problem, the modified variational
//! function `Phi(s)`, the growth-rate fixed point `lambda0` and the sweeps
//! built on top of it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigen_sorted, eigenvalues_sorted, fix_sign, gram, symmetrize, Reducer};
use crate::parallel::pool;
use crate::profiles::{PhysParams, SteadyState};
use crate::radial_ops::TrialSpace;

/// The xi-independent pieces of the three forms.
#[derive(Debug, Clone)]
pub struct FormCores {
    pub space: Arc<TrialSpace>,
    pub params: PhysParams,
    pub max_drho: f64,
    /// `B^T diag(w r rho) B`
    mass_w: DMatrix<f64>,
    /// `(D r B)^T diag(w r rho) (D r B)`
    mass_dw: DMatrix<f64>,
    /// `(D B)^T diag(w r) (D B)`
    visc_d1: DMatrix<f64>,
    /// `B^T diag(w / r) B`
    visc_0: DMatrix<f64>,
    /// `(D^2 r B)^T diag(w r) (D^2 r B)` plus the inner-wall term
    visc_d2: DMatrix<f64>,
    /// `-g B^T diag(w r D rho) B`
    buoy: DMatrix<f64>,
}

impl FormCores {
    pub fn new(space: &Arc<TrialSpace>, steady: &SteadyState) -> Result<Self> {
        let profile = &steady.profile;
        Self::with_density(space, &steady.params, profile.max_drho, |r| {
            let (a, b, _) = profile.eval_clamped(r);
            (a, b)
        })
    }

    /// Cores for an arbitrary density given as `r -> (rho, D rho)`; the
    /// products are integrated on a refined quadrature.
    pub fn with_density<F: Fn(f64) -> (f64, f64)>(
        space: &Arc<TrialSpace>,
        params: &PhysParams,
        max_drho: f64,
        density: F,
    ) -> Result<Self> {
        let grid = &space.grid;
        let n = grid.n;
        let r = &grid.nodes;
        let b = &space.basis;
        let fine = grid.fine();
        let rf = &fine.nodes;
        let d1b = grid.d1() * b;
        let d2b = grid.d2() * b;
        // product rule keeps D(rW) exact for the full-degree interpolant
        let drb = DMatrix::from_fn(n, b.ncols(), |i, j| b[(i, j)] + r[i] * d1b[(i, j)]);
        let d2rb = DMatrix::from_fn(n, b.ncols(), |i, j| 2.0 * d1b[(i, j)] + r[i] * d2b[(i, j)]);
        let bf = &fine.interp * b;
        let d1bf = &fine.interp * &d1b;
        let drbf = &fine.interp * &drb;
        let d2rbf = &fine.interp * &d2rb;
        let mut rho = DVector::zeros(rf.len());
        let mut drho = DVector::zeros(rf.len());
        for (i, &x) in rf.iter().enumerate() {
            let (a, d) = density(x);
            if !(a > 0.0) {
                return Err(Error::NonPositiveDensity { r: x, rho: a });
            }
            rho[i] = a;
            drho[i] = d;
        }
        let wr = fine.w.component_mul(rf);
        let wr_rho = wr.component_mul(&rho);
        let w_over_r = fine.w.component_div(rf);
        let wr_drho = wr.component_mul(&drho);
        let mass_w = gram(&bf, &wr_rho);
        let mass_dw = gram(&drbf, &wr_rho);
        let visc_d1 = gram(&d1bf, &wr);
        let visc_0 = gram(&bf, &w_over_r);
        let mut visc_d2 = gram(&d2rbf, &wr);
        let slip = params.slip_weight();
        if slip != 0.0 {
            let row = drb.row(0).transpose();
            visc_d2 += slip * &row * row.transpose();
            symmetrize(&mut visc_d2);
        }
        let buoy = gram(&bf, &wr_drho) * (-params.g);
        Ok(Self {
            space: Arc::clone(space),
            params: *params,
            max_drho,
            mass_w,
            mass_dw,
            visc_d1,
            visc_0,
            visc_d2,
            buoy,
        })
    }

    pub fn forms(&self, xi: f64) -> Result<QuadraticForms> {
        if xi == 0.0 || !xi.is_finite() {
            return Err(Error::InvalidWavenumber);
        }
        let x2 = xi * xi;
        let mut m1 = &self.mass_w * x2 + &self.mass_dw;
        let mut m2 = &self.visc_d1 * (2.0 * x2 + 1.0) + &self.visc_0 * ((x2 - 1.0) * (x2 - 1.0)) + &self.visc_d2;
        let mut m3 = &self.buoy * x2;
        symmetrize(&mut m1);
        symmetrize(&mut m2);
        symmetrize(&mut m3);
        Reducer::new(&m1, "M1")?;
        Ok(QuadraticForms { xi, m1, m2, m3, params: self.params, max_drho: self.max_drho, space: Arc::clone(&self.space) })
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub xi: f64,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub m3: DMatrix<f64>,
    pub params: PhysParams,
    pub max_drho: f64,
    pub space: Arc<TrialSpace>,
}

pub fn assemble_forms(space: &Arc<TrialSpace>, steady: &SteadyState, xi: f64) -> Result<QuadraticForms> {
    if xi == 0.0 || !xi.is_finite() {
        return Err(Error::InvalidWavenumber);
    }
    FormCores::new(space, steady)?.forms(xi)
}

/// Repeated evaluation of `Phi(s)` with the mass side factorized once.
#[derive(Debug, Clone)]
pub struct PhiEvaluator {
    reducer: Reducer,
    visc: DMatrix<f64>,
    buoy: DMatrix<f64>,
    mu: f64,
}

impl PhiEvaluator {
    pub fn new(forms: &QuadraticForms) -> Result<Self> {
        let reducer = Reducer::new(&forms.m1, "M1")?;
        let visc = reducer.reduce(&forms.m2)?;
        let buoy = reducer.reduce(&forms.m3)?;
        Ok(Self { reducer, visc, buoy, mu: forms.params.mu })
    }

    fn combined(&self, s: f64) -> DMatrix<f64> {
        &self.visc * (self.mu * s) + &self.buoy
    }

    pub fn phi(&self, s: f64) -> Result<f64> {
        let v = eigenvalues_sorted(&self.combined(s))?;
        Ok(v[0])
    }

    /// Minimizer at `s`, normalized to unit `M1` norm.
    pub fn minimizer(&self, s: f64) -> Result<(f64, DVector<f64>)> {
        let (vals, vecs) = eigen_sorted(&self.combined(s))?;
        let y = vecs.column(0).into_owned();
        let mut x = self.reducer.back(&y)?;
        fix_sign(&mut x);
        Ok((vals[0], x))
    }
}

pub fn phi(s: f64, forms: &QuadraticForms) -> Result<f64> {
    PhiEvaluator::new(forms)?.phi(s)
}

pub fn lambda_c(forms: &QuadraticForms) -> Result<f64> {
    let visc = &forms.m2 * forms.params.mu;
    let reducer = Reducer::new(&visc, "mu M2")?;
    let c = reducer.reduce(&(-&forms.m3))?;
    let v = eigenvalues_sorted(&c)?;
    Ok(v[v.len() - 1].max(0.0))
}

pub fn lambda_upper_bound(xi: f64, params: &PhysParams, max_drho: f64) -> f64 {
    let x2 = xi * xi;
    let (r1, r2) = (params.r1, params.r2);
    let den = params.mu * (r1 * r2 * (r2 - r1).powi(2) * (2.0 * x2 + 1.0) + (x2 - 1.0).powi(2));
    params.g * x2 * r2 * r2 * max_drho / den
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionPoint {
    pub k: i64,
    pub xi: f64,
    pub lambda0: Option<f64>,
    pub lambda_c: f64,
    pub lambda_upper: f64,
    /// Minimizer in trial-space coordinates, unit `M1` norm.
    #[serde(skip)]
    pub coeffs: Option<DVector<f64>>,
    /// Minimizer sampled on the grid.
    #[serde(skip)]
    pub w: Option<DVector<f64>>,
    pub iterations: usize,
    pub root_residual: f64,
    pub phi_at_zero: f64,
    pub error: Option<String>,
}

impl DispersionPoint {
    pub fn stable(&self) -> bool {
        self.lambda0.is_none()
    }
}

const MAX_BISECTION: usize = 400;

pub fn lambda0(forms: &QuadraticForms, tol: f64) -> Result<DispersionPoint> {
    if !(tol > 0.0) {
        return Err(Error::NonPositiveInput("root tolerance"));
    }
    let eval = PhiEvaluator::new(forms)?;
    let phi0 = eval.phi(0.0)?;
    let upper = lambda_upper_bound(forms.xi, &forms.params, forms.max_drho);
    let k = forms.xi.round() as i64;
    let mut point = DispersionPoint {
        k,
        xi: forms.xi,
        lambda0: None,
        lambda_c: 0.0,
        lambda_upper: upper,
        coeffs: None,
        w: None,
        iterations: 0,
        root_residual: f64::NAN,
        phi_at_zero: phi0,
        error: None,
    };
    if phi0 >= 0.0 {
        point.lambda_c = lambda_c(forms)?;
        return Ok(point);
    }
    let lc = lambda_c(forms)?;
    point.lambda_c = lc;
    let f = |s: f64| -> Result<f64> { Ok(s * s + eval.phi(s)?) };
    let f_hi = f(lc)?;
    if f_hi < 0.0 {
        return Err(Error::NoBracket(f_hi));
    }
    let (mut lo, mut hi) = (0.0f64, lc);
    let (mut f_lo, mut f_hi) = (phi0, f_hi);
    let mut it = 0;
    let root = loop {
        if it >= MAX_BISECTION {
            return Err(Error::MaxIterations(it));
        }
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // bracket exhausted at machine resolution
            break if f_lo.abs() < f_hi.abs() { lo } else { hi };
        }
        it += 1;
        let fm = f(mid)?;
        if fm.abs() <= tol {
            break mid;
        }
        if fm < 0.0 {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
    };
    let (theta, x) = eval.minimizer(root)?;
    point.lambda0 = Some(root);
    point.iterations = it;
    point.root_residual = root * root + theta;
    point.w = Some(forms.space.expand(&x));
    point.coeffs = Some(x);
    Ok(point)
}

#[derive(Debug, Clone, Serialize)]
pub struct DispersionCurve {
    pub points: Vec<DispersionPoint>,
    pub lambda_tilde: Option<f64>,
    pub k_star: Option<i64>,
    /// The maximizing wavenumber sits at the end of the sweep.
    pub truncated: bool,
}

impl DispersionCurve {
    pub fn point(&self, k: i64) -> Option<&DispersionPoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

fn failed_point(k: i64, e: &Error) -> DispersionPoint {
    DispersionPoint {
        k,
        xi: k as f64,
        lambda0: None,
        lambda_c: f64::NAN,
        lambda_upper: f64::NAN,
        coeffs: None,
        w: None,
        iterations: 0,
        root_residual: f64::NAN,
        phi_at_zero: f64::NAN,
        error: Some(e.to_string()),
    }
}

pub fn sweep_k(steady: &SteadyState, space: &Arc<TrialSpace>, k_max: usize, tol: f64) -> Result<DispersionCurve> {
    if k_max < 1 {
        return Err(Error::OutOfRange("k_max must be at least 1".into()));
    }
    let cores = FormCores::new(space, steady)?;
    let points: Vec<DispersionPoint> = pool().install(|| {
        (1..=k_max as i64)
            .into_par_iter()
            .map(|k| match cores.forms(k as f64).and_then(|f| lambda0(&f, tol)) {
                Ok(p) => p,
                Err(e) => failed_point(k, &e),
            })
            .collect()
    });
    Ok(curve_from_points(points))
}

pub fn curve_from_points(points: Vec<DispersionPoint>) -> DispersionCurve {
    let mut best: Option<(i64, f64)> = None;
    for p in &points {
        if let Some(l) = p.lambda0 {
            if best.map_or(true, |(_, b)| l > b) {
                best = Some((p.k, l));
            }
        }
    }
    let k_last = points.iter().map(|p| p.k).max().unwrap_or(0);
    DispersionCurve {
        truncated: best.is_some_and(|(k, _)| k == k_last),
        lambda_tilde: best.map(|b| b.1),
        k_star: best.map(|b| b.0),
        points,
    }
}

/// Growth rate at a real wavenumber, zero when stable.
pub fn growth_at(cores: &FormCores, xi: f64, tol: f64) -> Result<f64> {
    Ok(lambda0(&cores.forms(xi)?, tol)?.lambda0.unwrap_or(0.0))
}

/// Golden-section refinement of the continuous-wavenumber maximum around
/// `k_star`; returns `(xi, lambda)`.
pub fn refine_continuous(cores: &FormCores, k_star: i64, tol: f64) -> Result<(f64, f64)> {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = (k_star as f64 - 1.0).max(0.05);
    let mut b = k_star as f64 + 1.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = growth_at(cores, c, tol)?;
    let mut fd = growth_at(cores, d, tol)?;
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = growth_at(cores, c, tol)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = growth_at(cores, d, tol)?;
        }
    }
    let at_k = growth_at(cores, k_star as f64, tol)?;
    let (x, v) = if fc > fd { (c, fc) } else { (d, fd) };
    Ok(if at_k >= v { (k_star as f64, at_k) } else { (x, v) })
}

/// Reduced pencil of the two-dimensional growth functional for one Fourier
/// sector; returns its most negative Rayleigh quotient.
fn sector_min(cores: &FormCores, steady: &SteadyState, k: i64) -> Result<f64> {
    let space = &cores.space;
    let grid = &space.grid;
    let n = grid.n;
    let mu = steady.params.mu;
    let wr = grid.w.component_mul(&grid.nodes);
    if k == 0 {
        // only the azimuthal velocity and the density survive; the coupling vanishes
        return Ok(0.0);
    }
    let forms = cores.forms(k as f64)?;
    let k2 = (k * k) as f64;
    let m = space.dim();
    let coupling = DVector::from_fn(n, |i, _| wr[i] * (steady.params.g + steady.drho[i]));
    let cb = DMatrix::from_fn(n, m, |i, j| 0.5 * coupling[i] * space.basis[(i, j)]);
    let mut a = DMatrix::<f64>::zeros(m + n, m + n);
    let mut bm = DMatrix::<f64>::zeros(m + n, m + n);
    a.view_mut((0, 0), (m, m)).copy_from(&(&forms.m2 * (mu / k2)));
    a.view_mut((m, 0), (n, m)).copy_from(&cb);
    a.view_mut((0, m), (m, n)).copy_from(&cb.transpose());
    bm.view_mut((0, 0), (m, m)).copy_from(&(&forms.m1 * (1.0 / k2)));
    for i in 0..n {
        bm[(m + i, m + i)] = wr[i];
    }
    symmetrize(&mut a);
    let red = Reducer::new(&bm, "2D mass")?;
    let c = red.reduce(&a)?;
    Ok(eigenvalues_sorted(&c)?[0])
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxGrowth2d {
    pub lambda_tilde_tilde: f64,
    pub k: i64,
    pub per_sector: Vec<(i64, f64)>,
}

pub fn max_growth_2d(steady: &SteadyState, space: &Arc<TrialSpace>, k_max: usize) -> Result<MaxGrowth2d> {
    steady.params.validate()?;
    let cores = FormCores::new(space, steady)?;
    let sectors: Vec<Result<(i64, f64)>> = pool().install(|| {
        (0..=k_max as i64)
            .into_par_iter()
            .map(|k| sector_min(&cores, steady, k).map(|v| (k, -v)))
            .collect()
    });
    let per_sector = sectors.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best = (0i64, f64::MIN);
    for &(k, v) in &per_sector {
        if v > best.1 {
            best = (k, v);
        }
    }
    Ok(MaxGrowth2d { lambda_tilde_tilde: best.1, k: best.0, per_sector })
}
