//! Steady radial density profiles, hydrostatic pressure and the location of
//! the Rayleigh-Taylor unstable region.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radial_ops::RadialGrid;
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub r1: f64,
    pub r2: f64,
    pub mu: f64,
    pub g: f64,
    pub alpha: f64,
}

impl PhysParams {
    pub fn new(r1: f64, r2: f64, mu: f64, g: f64, alpha: f64) -> Result<Self> {
        let p = Self { r1, r2, mu, g, alpha };
        p.validate()?;
        Ok(p)
    }

    /// Inner radius 1, outer radius 2, viscosity 0.01, unit gravity, no slip
    /// coefficient.
    pub fn baseline() -> Self {
        Self { r1: 1.0, r2: 2.0, mu: 0.01, g: 1.0, alpha: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r1, self.r2, self.mu, self.g, self.alpha];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("physical parameters must be finite".into()));
        }
        if !(self.r1 > 0.0) {
            return Err(Error::Config(format!("R1 > 0 violated (R1 = {})", self.r1)));
        }
        if !(self.r2 > self.r1) {
            return Err(Error::Config(format!("R2 > R1 violated (R1 = {}, R2 = {})", self.r1, self.r2)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!("mu > 0 violated (mu = {})", self.mu)));
        }
        if !(self.g >= 0.0) {
            return Err(Error::Config(format!("g >= 0 violated (g = {})", self.g)));
        }
        if self.slip_weight() < -1e-14 {
            return Err(Error::Config(format!(
                "1 - alpha*R1/mu >= 0 violated (alpha = {}, R1 = {}, mu = {})",
                self.alpha, self.r1, self.mu
            )));
        }
        Ok(())
    }

    /// `1 - alpha R1 / mu`, clamped at zero against roundoff.
    pub fn slip_weight(&self) -> f64 {
        let s = 1.0 - self.alpha * self.r1 / self.mu;
        if s.abs() < 1e-14 {
            0.0
        } else {
            s
        }
    }

    /// `1/R1 - alpha/mu`, the Robin coefficient for the inner wall.
    pub fn robin(&self) -> f64 {
        self.slip_weight() / self.r1
    }
}

#[derive(Debug, Clone)]
pub enum ProfileKind {
    Constant { rho0: f64 },
    /// `rho0 + slope (r - R1)`
    Linear { rho0: f64, slope: f64 },
    /// `base + amp tanh((r - center)/width)`
    Tanh { base: f64, amp: f64, center: f64, width: f64 },
    /// `sum c_i r^i`
    Polynomial { coeffs: Vec<f64> },
    Tabulated { spline: CubicSpline },
    /// `offset - inner(R1 + R2 - r)`
    Reflected { inner: Box<DensityProfile>, offset: f64 },
}

#[derive(Debug, Clone)]
pub struct DensityProfile {
    pub kind: ProfileKind,
    pub r1: f64,
    pub r2: f64,
    pub max_drho: f64,
}

impl DensityProfile {
    pub fn new(kind: ProfileKind, params: &PhysParams) -> Result<Self> {
        if let ProfileKind::Tanh { width, .. } = &kind {
            if !(*width > 0.0) {
                return Err(Error::Config("tanh width must be positive".into()));
            }
        }
        if let ProfileKind::Tabulated { spline } = &kind {
            let k = spline.knots();
            if k[0] != params.r1 || k[k.len() - 1] != params.r2 {
                return Err(Error::Config(format!(
                    "tabulated profile must start at R1 = {} and end at R2 = {}",
                    params.r1, params.r2
                )));
            }
        }
        let mut p = Self { kind, r1: params.r1, r2: params.r2, max_drho: 0.0 };
        p.max_drho = p.scan_max_drho()?;
        Ok(p)
    }

    pub fn constant(rho0: f64, params: &PhysParams) -> Result<Self> {
        Self::new(ProfileKind::Constant { rho0 }, params)
    }

    /// The baseline layer `1.5 + 0.5 tanh((r - 1.5)/0.1)`.
    pub fn tanh_layer(params: &PhysParams) -> Result<Self> {
        Self::new(ProfileKind::Tanh { base: 1.5, amp: 0.5, center: 1.5, width: 0.1 }, params)
    }

    /// Point reflection about the annulus midpoint, which mirrors the sign
    /// pattern of the density gradient.
    pub fn reflected(&self) -> Result<Self> {
        let n = 2001;
        let mut top = f64::MIN;
        for i in 0..n {
            let r = self.r1 + (self.r2 - self.r1) * i as f64 / (n - 1) as f64;
            top = top.max(self.eval_raw(r).0);
        }
        let kind = ProfileKind::Reflected { inner: Box::new(self.clone()), offset: 2.0 * top };
        let params = PhysParams { r1: self.r1, r2: self.r2, mu: 1.0, g: 0.0, alpha: 0.0 };
        Self::new(kind, &params)
    }

    pub fn from_csv(path: &Path, params: &PhysParams) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Config(format!("cannot read profile table {}: {e}", path.display())))?;
        let mut r = Vec::new();
        let mut rho = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("profile table: {e}")))?;
            if rec.len() != 2 {
                return Err(Error::Config(format!("profile table row {} must have two columns", i + 1)));
            }
            let a = rec[0].parse::<f64>();
            let b = rec[1].parse::<f64>();
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    r.push(a);
                    rho.push(b);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Config(format!("profile table row {} is not numeric", i + 1))),
            }
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("profile table radii must be strictly increasing".into()));
        }
        let spline = CubicSpline::new(&r, &rho)?;
        Self::new(ProfileKind::Tabulated { spline }, params)
    }

    fn eval_raw(&self, r: f64) -> (f64, f64, f64) {
        match &self.kind {
            ProfileKind::Constant { rho0 } => (*rho0, 0.0, 0.0),
            ProfileKind::Linear { rho0, slope } => (rho0 + slope * (r - self.r1), *slope, 0.0),
            ProfileKind::Tanh { base, amp, center, width } => {
                let t = ((r - center) / width).tanh();
                let s2 = 1.0 - t * t;
                (base + amp * t, amp * s2 / width, -2.0 * amp * t * s2 / (width * width))
            }
            ProfileKind::Polynomial { coeffs } => {
                let mut v = 0.0;
                let mut d = 0.0;
                let mut dd = 0.0;
                for c in coeffs.iter().rev() {
                    dd = dd * r + 2.0 * d;
                    d = d * r + v;
                    v = v * r + c;
                }
                (v, d, dd)
            }
            ProfileKind::Tabulated { spline } => spline.eval3(r),
            ProfileKind::Reflected { inner, offset } => {
                let (v, d, dd) = inner.eval_raw(self.r1 + self.r2 - r);
                (offset - v, d, -dd)
            }
        }
    }

    /// Evaluation that clamps `r` into the annulus; used on internally
    /// generated radii that may sit a rounding error outside.
    pub fn eval_clamped(&self, r: f64) -> (f64, f64, f64) {
        self.eval_raw(r.clamp(self.r1, self.r2))
    }

    fn scan_max_drho(&self) -> Result<f64> {
        let n = 4001;
        let rs: Vec<f64> = (0..n).map(|i| self.r1 + (self.r2 - self.r1) * i as f64 / (n - 1) as f64).collect();
        let mut vals = Vec::with_capacity(n);
        for &r in &rs {
            let (rho, d, _) = self.eval_raw(r);
            if !(rho > 0.0) {
                return Err(Error::NonPositiveDensity { r, rho });
            }
            vals.push(d.abs());
        }
        let mut best = vals.iter().copied().fold(0.0, f64::max);
        for i in 0..n {
            let left = if i > 0 { vals[i - 1] } else { f64::MIN };
            let right = if i + 1 < n { vals[i + 1] } else { f64::MIN };
            if vals[i] >= left && vals[i] >= right {
                let a = rs[i.saturating_sub(1)];
                let b = rs[(i + 1).min(n - 1)];
                best = best.max(self.golden_max(a, b));
            }
        }
        Ok(best)
    }

    fn golden_max(&self, mut a: f64, mut b: f64) -> f64 {
        let f = |r: f64| self.eval_raw(r).1.abs();
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut best = f(a).max(f(b));
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        for _ in 0..80 {
            let (fc, fd) = (f(c), f(d));
            best = best.max(fc).max(fd);
            if fc > fd {
                b = d;
            } else {
                a = c;
            }
            c = b - phi * (b - a);
            d = a + phi * (b - a);
        }
        best
    }
}

/// `(rho, D rho, D^2 rho)` at `r`.
pub fn eval_profile(profile: &DensityProfile, r: f64) -> Result<(f64, f64, f64)> {
    if !(r >= profile.r1 && r <= profile.r2) {
        return Err(Error::OutOfDomain { r, r1: profile.r1, r2: profile.r2 });
    }
    let v = profile.eval_raw(r);
    if !(v.0 > 0.0) {
        return Err(Error::NonPositiveDensity { r, rho: v.0 });
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub profile: DensityProfile,
    pub params: PhysParams,
    pub grid: Arc<RadialGrid>,
    pub rho: DVector<f64>,
    pub drho: DVector<f64>,
    pub d2rho: DVector<f64>,
    pub pbar: DVector<f64>,
}

pub fn hydrostatic_pressure(
    profile: &DensityProfile,
    params: &PhysParams,
    grid: &Arc<RadialGrid>,
) -> Result<SteadyState> {
    let n = grid.n;
    let mut rho = DVector::zeros(n);
    let mut drho = DVector::zeros(n);
    let mut d2rho = DVector::zeros(n);
    for i in 0..n {
        let (a, b, c) = eval_profile(profile, grid.nodes[i].clamp(profile.r1, profile.r2))?;
        rho[i] = a;
        drho[i] = b;
        d2rho[i] = c;
    }
    let integrand: Vec<f64> = rho.iter().map(|v| v * params.g).collect();
    let cum = grid.cumulative_integral(&integrand);
    let pbar = DVector::from_iterator(n, cum.into_iter().map(|v| -v));
    Ok(SteadyState { profile: profile.clone(), params: *params, grid: Arc::clone(grid), rho, drho, d2rho, pbar })
}

/// Maximal subintervals where `D rho > 0`.
pub fn unstable_interval(profile: &DensityProfile, grid: &RadialGrid) -> Vec<(f64, f64)> {
    let xs: Vec<f64> = grid.nodes.iter().map(|r| r.clamp(profile.r1, profile.r2)).collect();
    let pos: Vec<bool> = xs.iter().map(|&r| profile.eval_raw(r).1 > 0.0).collect();
    let refine = |a: f64, b: f64, pos_at_a: bool| {
        let (mut lo, mut hi) = (a, b);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (profile.eval_raw(mid).1 > 0.0) == pos_at_a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut out = Vec::new();
    let mut start: Option<f64> = if pos[0] { Some(profile.r1) } else { None };
    for i in 1..xs.len() {
        if pos[i] != pos[i - 1] {
            let edge = refine(xs[i - 1], xs[i], pos[i - 1]);
            if pos[i] {
                start = Some(edge);
            } else if let Some(s) = start.take() {
                out.push((s, edge));
            }
        }
    }
    if let Some(s) = start {
        out.push((s, profile.r2));
    }
    out
}
