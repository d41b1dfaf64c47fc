//! Empirical checks of the functional inequalities on the annulus.
//!
//! Norms are taken over the rectangle `(r, theta)` with the plain measure
//! `dr dtheta` and `grad = (d_r, d_theta)`. Quadratic quantities use
//! Parseval per Fourier mode on the refined radial quadrature; `L^q` norms
//! and sup norms sample the field on the grid nodes times a uniform angle
//! grid fine enough to integrate `|f|^q` exactly in `theta`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field2d::{fmt17, vector_laplacian, CVector, FourierTransform, PolarField, VelocityField, Weight};
use crate::parallel::pool;
use crate::profiles::PhysParams;
use crate::radial_ops::RadialGrid;

/// The seven registered inequality checks.
pub const LEMMAS: [&str; 7] = [
    "poincare_L2k",
    "ladyzhenskaya",
    "grad_interp_L2",
    "grad_interp_L4",
    "sup_bound",
    "F1_equiv",
    "laplacian_equiv",
];

const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FieldSpace {
    /// Divergence free, `v_r = 0` on both walls, `v_theta(R2) = 0`.
    G12,
    /// `G12` plus the slip condition `d_r v_theta = (1/r - alpha/mu) v_theta` at `R1`.
    V12,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    /// `|V|_{L^{2k}} <= C |grad V|`.
    PoincareL2k(u32),
    /// `|v_r| <= (R2 - R1) |d_r v_r|`.
    PoincareVr,
    Ladyzhenskaya,
    GradInterpL2,
    GradInterpL4,
    SupBound,
    F1Equiv,
    LaplacianEquiv,
}

impl Lemma {
    pub fn parse(id: &str) -> Result<Self> {
        let (base, arg) = match id.split_once(':') {
            Some((b, a)) => (b, Some(a)),
            None => (id, None),
        };
        let lemma = match base {
            "poincare_L2k" => {
                let k = match arg {
                    None => 1,
                    Some(a) => a.parse::<u32>().ok().filter(|&k| k >= 1).ok_or_else(|| Error::UnknownLemma(id.into()))?,
                };
                return Ok(Lemma::PoincareL2k(k));
            }
            "poincare_vr" => Lemma::PoincareVr,
            "ladyzhenskaya" => Lemma::Ladyzhenskaya,
            "grad_interp_L2" => Lemma::GradInterpL2,
            "grad_interp_L4" => Lemma::GradInterpL4,
            "sup_bound" => Lemma::SupBound,
            "F1_equiv" => Lemma::F1Equiv,
            "laplacian_equiv" => Lemma::LaplacianEquiv,
            _ => return Err(Error::UnknownLemma(id.into())),
        };
        if arg.is_some() {
            return Err(Error::UnknownLemma(id.into()));
        }
        Ok(lemma)
    }

    pub fn id(&self) -> String {
        match self {
            Lemma::PoincareL2k(1) => "poincare_L2k".into(),
            Lemma::PoincareL2k(k) => format!("poincare_L2k:{k}"),
            Lemma::PoincareVr => "poincare_vr".into(),
            Lemma::Ladyzhenskaya => "ladyzhenskaya".into(),
            Lemma::GradInterpL2 => "grad_interp_L2".into(),
            Lemma::GradInterpL4 => "grad_interp_L4".into(),
            Lemma::SupBound => "sup_bound".into(),
            Lemma::F1Equiv => "F1_equiv".into(),
            Lemma::LaplacianEquiv => "laplacian_equiv".into(),
        }
    }

    pub fn space(&self) -> FieldSpace {
        match self {
            Lemma::PoincareL2k(_) | Lemma::PoincareVr | Lemma::Ladyzhenskaya | Lemma::F1Equiv => FieldSpace::G12,
            _ => FieldSpace::V12,
        }
    }

    /// Both a lower and an upper constant are claimed.
    pub fn two_sided(&self) -> bool {
        matches!(self, Lemma::F1Equiv | Lemma::LaplacianEquiv)
    }
}

/// Grid, Fourier truncation and geometry shared by all trials.
#[derive(Debug, Clone)]
pub struct Harness {
    pub grid: Arc<RadialGrid>,
    pub kmax: usize,
    pub params: PhysParams,
    /// Degree of the random radial polynomial multiplying the envelope.
    pub degree: usize,
}

/// Random coefficients of a streamfunction, `(degree + 1)` Chebyshev
/// coefficients per wavenumber `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamCoeffs {
    pub c: Vec<Vec<Complex64>>,
}

impl StreamCoeffs {
    pub fn random(seed: u64, kmax: usize, degree: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..=kmax)
            .map(|k| {
                (0..=degree)
                    .map(|j| {
                        let damp = ((1 + k) * (1 + j)) as f64;
                        let damp = damp * damp;
                        let im = if k == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
                        Complex64::new(rng.gen_range(-1.0..1.0), im) / damp
                    })
                    .collect()
            })
            .collect();
        Self { c }
    }

    fn perturbed(&self, rng: &mut ChaCha8Rng, size: f64) -> Self {
        let c = self
            .c
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .map(|z| {
                        let scale = size * z.norm().max(1e-3);
                        let im = if k == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) };
                        z + Complex64::new(rng.gen_range(-1.0..1.0), im) * scale
                    })
                    .collect()
            })
            .collect();
        Self { c }
    }
}

impl Harness {
    pub fn new(grid: &Arc<RadialGrid>, kmax: usize, params: &PhysParams) -> Result<Self> {
        if kmax == 0 {
            return Err(Error::Config("K >= 1 violated".into()));
        }
        params.validate()?;
        Ok(Self { grid: Arc::clone(grid), kmax, params: params.clone(), degree: 6 })
    }

    /// Velocity `(k psi_k i / r, -D psi_k)` of the streamfunction
    /// `psi_k = E(r) P_k(r) + c_k (r - R1)^2 (r - R2)^2`, where the envelope
    /// `E` enforces the wall conditions and `c_k` the slip condition.
    pub fn field(&self, coeffs: &StreamCoeffs, space: FieldSpace) -> Result<VelocityField> {
        let g = &self.grid;
        let (r1, r2) = (g.r1, g.r2);
        let n = g.n;
        let s = self.params.slip_weight() / r1;
        let x = |r: f64| (2.0 * r - r1 - r2) / (r2 - r1);
        let mut vr = PolarField::zeros(g, self.kmax);
        let mut vth = PolarField::zeros(g, self.kmax);
        for (k, row) in coeffs.c.iter().enumerate().take(self.kmax + 1) {
            // E P and its first two derivatives at R1, by the Chebyshev recurrences
            let cheb = |t: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                let m = row.len();
                let mut t0 = vec![0.0; m];
                let mut t1 = vec![0.0; m];
                let mut t2 = vec![0.0; m];
                for j in 0..m {
                    match j {
                        0 => t0[0] = 1.0,
                        1 => {
                            t0[1] = t;
                            t1[1] = 1.0;
                        }
                        _ => {
                            t0[j] = 2.0 * t * t0[j - 1] - t0[j - 2];
                            t1[j] = 2.0 * t0[j - 1] + 2.0 * t * t1[j - 1] - t1[j - 2];
                            t2[j] = 4.0 * t1[j - 1] + 2.0 * t * t2[j - 1] - t2[j - 2];
                        }
                    }
                }
                (t0, t1, t2)
            };
            let poly = |r: f64| -> (Complex64, Complex64, Complex64) {
                let (t0, t1, t2) = cheb(x(r));
                let h = 2.0 / (r2 - r1);
                let mut p = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                for (j, c) in row.iter().enumerate() {
                    p.0 += c * t0[j];
                    p.1 += c * (t1[j] * h);
                    p.2 += c * (t2[j] * h * h);
                }
                p
            };
            // envelope and derivatives
            let env = |r: f64| -> (f64, f64, f64) {
                if k == 0 {
                    let e = (r - r2).powi(2);
                    (e, 2.0 * (r - r2), 2.0)
                } else {
                    let (a, b) = (r - r1, r - r2);
                    (a * b * b, b * b + 2.0 * a * b, 4.0 * b + 2.0 * a)
                }
            };
            let c_slip = match space {
                FieldSpace::G12 => Complex64::new(0.0, 0.0),
                FieldSpace::V12 => {
                    let (p0, p1, p2) = poly(r1);
                    let (e0, e1, e2) = env(r1);
                    let d1 = p1 * e0 + p0 * e1;
                    let d2 = p2 * e0 + p1 * (2.0 * e1) + p0 * e2;
                    (d1 * s - d2) / (2.0 * (r1 - r2).powi(2))
                }
            };
            let psi = CVector::from_fn(n, |i, _| {
                let r = g.nodes[i];
                poly(r).0 * env(r).0 + c_slip * ((r - r1) * (r - r2)).powi(2)
            });
            let dpsi = {
                let a = g.d1() * psi.map(|z| z.re);
                let b = g.d1() * psi.map(|z| z.im);
                CVector::from_fn(n, |i, _| Complex64::new(a[i], b[i]))
            };
            let kf = k as f64;
            let mut w = CVector::from_fn(n, |i, _| psi[i] * Complex64::new(0.0, kf) / g.nodes[i]);
            if k != 0 {
                w[0] = Complex64::new(0.0, 0.0);
                w[n - 1] = Complex64::new(0.0, 0.0);
            }
            let mut t = -dpsi;
            t[n - 1] = Complex64::new(0.0, 0.0);
            vr.set_mode(k as i64, w);
            vth.set_mode(k as i64, t);
        }
        VelocityField::new(vr, vth)
    }

    pub fn random_field(&self, seed: u64, space: FieldSpace) -> Result<VelocityField> {
        self.field(&StreamCoeffs::random(seed, self.kmax, self.degree), space)
    }

    fn transform(&self, q: f64) -> FourierTransform {
        let m = ((q.ceil() as usize).max(4) * self.kmax + 2).max(8 * self.kmax + 8);
        FourierTransform::new(m + (m % 2))
    }

    /// `int int |sum_c f_c^2|^{q/2} dr dtheta` over the sample grid.
    fn lq_pow(&self, parts: &[DMatrix<f64>], q: f64, m: usize) -> f64 {
        let w = &self.grid.w;
        let dtheta = 2.0 * PI / m as f64;
        let mut acc = 0.0;
        for i in 0..self.grid.n {
            let mut row = 0.0;
            for j in 0..m {
                let s: f64 = parts.iter().map(|p| p[(i, j)] * p[(i, j)]).sum();
                row += s.powf(0.5 * q);
            }
            acc += w[i] * row * dtheta;
        }
        acc
    }

    fn lq(&self, fields: &[&PolarField], q: f64) -> f64 {
        let tf = self.transform(q);
        let parts: Vec<DMatrix<f64>> = fields.iter().map(|f| f.to_physical(&tf)).collect();
        self.lq_pow(&parts, q, tf.m).powf(1.0 / q)
    }

    fn sup(&self, f: &PolarField) -> f64 {
        let tf = self.transform(8.0);
        f.to_physical(&tf).iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }
}

/// Outcome of one inequality evaluation: the quotient whose supremum is the
/// empirical constant, and whether an explicitly known bound was exceeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub ratio: f64,
    pub violated: bool,
}

fn l2(f: &PolarField) -> f64 {
    f.norm(Weight::Plain)
}

fn grad_parts(v: &VelocityField) -> [PolarField; 4] {
    [v.vr.dr(), v.vr.dtheta(), v.vth.dr(), v.vth.dtheta()]
}

fn finite_check(ratio: f64) -> Eval {
    Eval { ratio, violated: !ratio.is_finite() || !(ratio > 0.0) }
}

fn bound_check(ratio: f64, bound: f64) -> Eval {
    Eval { ratio, violated: !ratio.is_finite() || ratio > bound * (1.0 + REL_TOL) }
}

/// Evaluates one inequality on a given field.
pub fn lemma_ratio(lemma: Lemma, v: &VelocityField, h: &Harness) -> Result<Eval> {
    let (r1, r2) = (h.params.r1, h.params.r2);
    let len = r2 - r1;
    let grad = || v.grad_norm_sq().sqrt();
    let norm = || v.norm(Weight::Plain);
    Ok(match lemma {
        Lemma::PoincareL2k(k) => {
            let q = 2.0 * k as f64;
            let ratio = h.lq(&[&v.vr, &v.vth], q) / grad();
            if k == 1 {
                // first eigenvalue with Dirichlet data on one wall only
                bound_check(ratio, 2.0 * len / PI)
            } else {
                finite_check(ratio)
            }
        }
        Lemma::PoincareVr => bound_check(l2(&v.vr) / l2(&v.vr.dr()), len),
        Lemma::Ladyzhenskaya => finite_check(h.lq(&[&v.vr, &v.vth], 4.0).powi(2) / (grad() * norm())),
        Lemma::GradInterpL2 => {
            let mut worst = 0.0f64;
            for f in [&v.vr, &v.vth] {
                let a = l2(&f.dr()).powi(2) / (l2(f) * l2(&f.dr().dr()));
                let b = l2(&f.dtheta()).powi(2) / (l2(f) * l2(&f.dtheta().dtheta()));
                for x in [a, b] {
                    if x.is_finite() {
                        worst = worst.max(x);
                    }
                }
            }
            bound_check(worst, 1.0)
        }
        Lemma::GradInterpL4 => {
            let g = grad_parts(v);
            let refs: Vec<&PolarField> = g.iter().collect();
            let l4 = h.lq(&refs, 4.0);
            let mut hess = 0.0;
            for f in [&v.vr, &v.vth] {
                hess += f.dr().dr().norm_sq(Weight::Plain)
                    + 2.0 * f.dr().dtheta().norm_sq(Weight::Plain)
                    + f.dtheta().dtheta().norm_sq(Weight::Plain);
            }
            finite_check(l4 * l4 / (grad() * hess.sqrt()))
        }
        Lemma::SupBound => {
            let vr = &v.vr;
            let rhs_r =
                2.0 * l2(vr) * ((l2(&vr.dr().dr()) * l2(&vr.dtheta().dtheta())).sqrt() + l2(&vr.dr().dtheta()));
            let explicit = h.sup(vr).powi(2) / rhs_r;
            let t = &v.vth;
            let rhs_t = l2(t) * (l2(&t.dr().dr()) + l2(&t.dtheta().dtheta()) + l2(&t.dr().dtheta()));
            let ratio = h.sup(t).powi(2) / rhs_t;
            let mut e = finite_check(ratio);
            e.violated |= explicit.is_finite() && explicit > 1.0 + REL_TOL;
            e
        }
        Lemma::F1Equiv => finite_check(v.f1_energy() / v.grad_norm_sq()),
        Lemma::LaplacianEquiv => {
            let vl = vector_laplacian(v)?;
            let flat = v.vr.dr().dr().add(&v.vr.dtheta().dtheta())?.norm_sq(Weight::Plain)
                + v.vth.dr().dr().add(&v.vth.dtheta().dtheta())?.norm_sq(Weight::Plain);
            finite_check(vl.norm_sq(Weight::Plain) / flat)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub lemma: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest quotient seen, a lower bound for the best constant.
    pub worst_ratio: f64,
    /// Smallest quotient seen; for two-sided bounds a lower-constant estimate.
    pub best_ratio: f64,
    pub worst_seed: u64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Seed of trial `i` in a run started from `seed0`.
pub fn trial_seed(seed0: u64, i: usize) -> u64 {
    seed0.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

fn evaluate_trials(lemma: Lemma, trials: usize, seed0: u64, h: &Harness) -> Result<Vec<(u64, Eval)>> {
    pool().install(|| {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(seed0, i);
                let v = h.random_field(seed, lemma.space())?;
                Ok((seed, lemma_ratio(lemma, &v, h)?))
            })
            .collect()
    })
}

pub fn check_inequality(lemma_id: &str, trials: usize, seed0: u64, h: &Harness) -> Result<CheckResult> {
    let lemma = Lemma::parse(lemma_id)?;
    let evals = evaluate_trials(lemma, trials, seed0, h)?;
    let mut res = CheckResult {
        lemma: lemma.id(),
        trials,
        violations: 0,
        worst_ratio: f64::NEG_INFINITY,
        best_ratio: f64::INFINITY,
        worst_seed: seed0,
    };
    for (seed, e) in evals {
        if e.violated {
            res.violations += 1;
        }
        if e.ratio > res.worst_ratio {
            res.worst_ratio = e.ratio;
            res.worst_seed = seed;
        }
        res.best_ratio = res.best_ratio.min(e.ratio);
    }
    Ok(res)
}

/// Constants sharpened by hill climbing in streamfunction-coefficient space,
/// starting from the extreme random trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub lower: f64,
    pub upper: f64,
}

fn climb(lemma: Lemma, start: StreamCoeffs, steps: usize, sign: f64, seed: u64, h: &Harness) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let score = |c: &StreamCoeffs| -> Result<f64> {
        let r = lemma_ratio(lemma, &h.field(c, lemma.space())?, h)?.ratio;
        Ok(if r.is_finite() { sign * r } else { f64::NEG_INFINITY })
    };
    let mut best = start;
    let mut best_score = score(&best)?;
    let mut size = 0.5;
    for _ in 0..steps {
        let cand = best.perturbed(&mut rng, size);
        let s = score(&cand)?;
        if s > best_score {
            best = cand;
            best_score = s;
            size = (size * 1.5).min(2.0);
        } else {
            size = (size * 0.8).max(1e-4);
        }
    }
    Ok(sign * best_score)
}

pub fn estimate_bounds(lemma_id: &str, trials: usize, maximize_steps: usize, seed0: u64, h: &Harness) -> Result<ConstantEstimate> {
    let lemma = Lemma::parse(lemma_id)?;
    let evals = evaluate_trials(lemma, trials.max(1), seed0, h)?;
    let finite = || evals.iter().filter(|(_, e)| e.ratio.is_finite());
    let hi = finite().max_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio)).map(|x| x.0).unwrap_or(seed0);
    let lo = finite().min_by(|a, b| a.1.ratio.total_cmp(&b.1.ratio)).map(|x| x.0).unwrap_or(seed0);
    let coeffs = |s: u64| StreamCoeffs::random(s, h.kmax, h.degree);
    let upper = climb(lemma, coeffs(hi), maximize_steps, 1.0, seed0 ^ 0x5eed, h)?;
    let lower = if lemma.two_sided() {
        climb(lemma, coeffs(lo), maximize_steps, -1.0, seed0 ^ 0xfeed, h)?
    } else {
        finite().map(|x| x.1.ratio).fold(f64::INFINITY, f64::min)
    };
    Ok(ConstantEstimate { lower, upper })
}

/// Lower bound on the best upper constant of the inequality.
pub fn estimate_constant(lemma_id: &str, trials: usize, maximize_steps: usize, seed0: u64, h: &Harness) -> Result<f64> {
    Ok(estimate_bounds(lemma_id, trials, maximize_steps, seed0, h)?.upper)
}

pub fn write_verify_csv(path: &Path, results: &[CheckResult]) -> Result<()> {
    let mut out = String::from("lemma,trials,violations,worst_ratio,worst_seed\n");
    for r in results {
        out.push_str(&format!("{},{},{},{},{}\n", r.lemma, r.trials, r.violations, fmt17(r.worst_ratio), r.worst_seed));
    }
    std::fs::write(path, out)?;
    Ok(())
}
