//! Radial discretization of `[R1, R2]`: nodes, differentiation matrices up to
//! fourth order, quadrature weights and the constrained trial space used by
//! the fourth-order eigenvalue problem.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::PhysParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "chebyshev")]
    Chebyshev,
    #[serde(rename = "fd4")]
    FiniteDifference4,
}

impl Scheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "chebyshev" | "chebyshev-collocation" => Ok(Scheme::Chebyshev),
            "fd4" | "finite-difference-4" => Ok(Scheme::FiniteDifference4),
            other => Err(Error::Config(format!("unknown grid scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub n: usize,
    pub r1: f64,
    pub r2: f64,
    pub scheme: Scheme,
    /// Increasing radii, `nodes[0] = R1`, `nodes[n-1] = R2`.
    pub nodes: DVector<f64>,
    /// `d[m-1]` is the order-`m` differentiation matrix.
    pub d: [DMatrix<f64>; 4],
    pub w: DVector<f64>,
    fine_cache: OnceLock<FineQuadrature>,
}

pub fn build_grid(n: usize, params: &PhysParams, scheme: Scheme) -> Result<RadialGrid> {
    if n < 8 {
        return Err(Error::TooFewNodes(n));
    }
    let (r1, r2) = (params.r1, params.r2);
    let len = r2 - r1;
    match scheme {
        Scheme::Chebyshev => {
            let big_n = n - 1;
            // x_j = -cos(pi j / N) written symmetrically for exact antisymmetry
            let x: Vec<f64> = (0..n)
                .map(|j| -((PI * (big_n as f64 - 2.0 * j as f64)) / (2.0 * big_n as f64)).sin())
                .collect();
            let nodes = DVector::from_iterator(n, x.iter().map(|&xi| r1 + 0.5 * (xi + 1.0) * len));
            let mut nodes = nodes;
            nodes[0] = r1;
            nodes[n - 1] = r2;
            let dm = chebdif(n, 4);
            let scale = 2.0 / len;
            let d = [
                &dm[0] * scale,
                &dm[1] * scale.powi(2),
                &dm[2] * scale.powi(3),
                &dm[3] * scale.powi(4),
            ];
            let w = clenshaw_curtis(n) * (0.5 * len);
            Ok(RadialGrid { n, r1, r2, scheme, nodes, d, w, fine_cache: OnceLock::new() })
        }
        Scheme::FiniteDifference4 => {
            let h = len / (n - 1) as f64;
            let mut nodes = DVector::from_iterator(n, (0..n).map(|j| r1 + j as f64 * h));
            nodes[n - 1] = r2;
            let x: Vec<f64> = nodes.iter().copied().collect();
            let d = [fd_matrix(&x, 1), fd_matrix(&x, 2), fd_matrix(&x, 3), fd_matrix(&x, 4)];
            let w = gregory_weights(n, h);
            Ok(RadialGrid { n, r1, r2, scheme, nodes, d, w, fine_cache: OnceLock::new() })
        }
    }
}

impl RadialGrid {
    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d[0]
    }
    pub fn d2(&self) -> &DMatrix<f64> {
        &self.d[1]
    }
    pub fn d3(&self) -> &DMatrix<f64> {
        &self.d[2]
    }
    pub fn d4(&self) -> &DMatrix<f64> {
        &self.d[3]
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.w.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        self.n == other.n && self.scheme == other.scheme && self.r1 == other.r1 && self.r2 == other.r2
    }

    /// `F(r_i) = \int_{R1}^{r_i} f dr` at every node.
    pub fn cumulative_integral(&self, f: &[f64]) -> Vec<f64> {
        match self.scheme {
            Scheme::Chebyshev => {
                let a = cheb_coeffs(f);
                let big_n = self.n - 1;
                let mut b = vec![0.0; big_n + 2];
                let get = |m: usize| if m <= big_n { a[m] } else { 0.0 };
                b[1] = get(0) - 0.5 * get(2);
                for m in 2..=big_n + 1 {
                    b[m] = (get(m - 1) - get(m + 1)) / (2.0 * m as f64);
                }
                b[0] = -(1..b.len()).map(|m| if m % 2 == 0 { b[m] } else { -b[m] }).sum::<f64>();
                let half = 0.5 * (self.r2 - self.r1);
                (0..self.n)
                    .map(|j| {
                        let phi = PI * (big_n - j) as f64 / big_n as f64;
                        half * b.iter().enumerate().map(|(m, bm)| bm * (m as f64 * phi).cos()).sum::<f64>()
                    })
                    .collect()
            }
            Scheme::FiniteDifference4 => {
                let x = self.nodes.as_slice();
                let mut out = vec![0.0; self.n];
                for i in 1..self.n {
                    let lo = if i >= 2 { (i - 2).min(self.n - 4) } else { 0 };
                    let idx: Vec<usize> = (lo..lo + 4).collect();
                    let piece = integrate_lagrange(&idx.iter().map(|&j| x[j]).collect::<Vec<_>>(),
                        &idx.iter().map(|&j| f[j]).collect::<Vec<_>>(), x[i - 1], x[i]);
                    out[i] = out[i - 1] + piece;
                }
                out
            }
        }
    }

    /// Interpolates nodal values at an arbitrary radius.
    pub fn interpolate(&self, f: &[f64], r: f64) -> f64 {
        match self.scheme {
            Scheme::Chebyshev => {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..self.n {
                    let diff = r - self.nodes[j];
                    if diff == 0.0 {
                        return f[j];
                    }
                    let mut wj = if j % 2 == 0 { 1.0 } else { -1.0 };
                    if j == 0 || j == self.n - 1 {
                        wj *= 0.5;
                    }
                    let t = wj / diff;
                    num += t * f[j];
                    den += t;
                }
                num / den
            }
            Scheme::FiniteDifference4 => {
                let h = (self.r2 - self.r1) / (self.n - 1) as f64;
                let i = (((r - self.r1) / h).floor() as isize).clamp(0, self.n as isize - 2) as usize;
                let lo = if i >= 1 { (i - 1).min(self.n - 4) } else { 0 };
                let mut acc = 0.0;
                for j in lo..lo + 4 {
                    let mut l = 1.0;
                    for m in lo..lo + 4 {
                        if m != j {
                            l *= (r - self.nodes[m]) / (self.nodes[j] - self.nodes[m]);
                        }
                    }
                    acc += l * f[j];
                }
                acc
            }
        }
    }
}

/// A finer quadrature together with the interpolation matrix from the grid
/// nodes, so that products of grid polynomials integrate exactly.
#[derive(Debug, Clone)]
pub struct FineQuadrature {
    pub nodes: DVector<f64>,
    pub w: DVector<f64>,
    pub interp: DMatrix<f64>,
}

impl RadialGrid {
    /// Cached [`RadialGrid::fine_quadrature`].
    pub fn fine(&self) -> &FineQuadrature {
        self.fine_cache.get_or_init(|| self.fine_quadrature())
    }

    pub fn fine_quadrature(&self) -> FineQuadrature {
        match self.scheme {
            Scheme::Chebyshev => {
                let nf = 2 * self.n + 64;
                let params = PhysParams { r1: self.r1, r2: self.r2, mu: 1.0, g: 0.0, alpha: 0.0 };
                let len = self.r2 - self.r1;
                let big_n = nf - 1;
                let mut nodes = DVector::from_iterator(
                    nf,
                    (0..nf).map(|j| {
                        let x = -((PI * (big_n as f64 - 2.0 * j as f64)) / (2.0 * big_n as f64)).sin();
                        params.r1 + 0.5 * (x + 1.0) * len
                    }),
                );
                nodes[0] = self.r1;
                nodes[nf - 1] = self.r2;
                let w = clenshaw_curtis(nf) * (0.5 * len);
                let mut interp = DMatrix::<f64>::zeros(nf, self.n);
                for (i, &r) in nodes.iter().enumerate() {
                    let row = self.barycentric_row(r);
                    for j in 0..self.n {
                        interp[(i, j)] = row[j];
                    }
                }
                FineQuadrature { nodes, w, interp }
            }
            Scheme::FiniteDifference4 => FineQuadrature {
                nodes: self.nodes.clone(),
                w: self.w.clone(),
                interp: DMatrix::identity(self.n, self.n),
            },
        }
    }

    /// Row of Chebyshev barycentric interpolation weights at `r`.
    pub fn barycentric_row(&self, r: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n];
        for j in 0..self.n {
            if r == self.nodes[j] {
                row[j] = 1.0;
                return row;
            }
        }
        let mut den = 0.0;
        for j in 0..self.n {
            let mut wj = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == self.n - 1 {
                wj *= 0.5;
            }
            row[j] = wj / (r - self.nodes[j]);
            den += row[j];
        }
        for v in row.iter_mut() {
            *v /= den;
        }
        row
    }
}

fn integrate_lagrange(x: &[f64], f: &[f64], a: f64, b: f64) -> f64 {
    // three-point Gauss-Legendre is exact for the cubic interpolant
    let gp = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let gw = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (p, wq) in gp.iter().zip(gw) {
        let r = mid + half * p;
        let mut v = 0.0;
        for j in 0..x.len() {
            let mut l = 1.0;
            for m in 0..x.len() {
                if m != j {
                    l *= (r - x[m]) / (x[j] - x[m]);
                }
            }
            v += l * f[j];
        }
        acc += wq * v;
    }
    acc * half
}

/// Chebyshev differentiation matrices on increasing Lobatto points of `[-1, 1]`.
pub fn chebdif(n: usize, max_order: usize) -> Vec<DMatrix<f64>> {
    let big_n = n - 1;
    let n1 = n / 2;
    let n2 = n.div_ceil(2);
    let th: Vec<f64> = (0..n).map(|k| k as f64 * PI / big_n as f64).collect();
    let mut dx = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            dx[(i, j)] = 2.0 * ((th[i] + th[j]) / 2.0).sin() * ((th[j] - th[i]) / 2.0).sin();
        }
    }
    // flip trick: rows below the middle come from the mirrored upper rows
    let upper = dx.clone();
    for i in n1..n {
        for j in 0..n {
            let src = n - 1 - i;
            if src < n2 {
                dx[(i, j)] = -upper[(src, n - 1 - j)];
            }
        }
    }
    for i in 0..n {
        dx[(i, i)] = 1.0;
    }
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let mut v = sign;
            if i == 0 || i == big_n {
                v *= 2.0;
            }
            if j == 0 || j == big_n {
                v /= 2.0;
            }
            c[(i, j)] = v;
        }
    }
    let mut z = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z[(i, j)] = 1.0 / dx[(i, j)];
            }
        }
    }
    let mut d = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(max_order);
    for ell in 1..=max_order {
        let mut next = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    next[(i, j)] = ell as f64 * z[(i, j)] * (c[(i, j)] * d[(i, i)] - d[(i, j)]);
                }
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| next[(i, j)]).sum();
            next[(i, i)] = -s;
        }
        d = next;
        out.push(d.clone());
    }
    // reorder from decreasing to increasing nodes; derivative sign is unchanged
    out.into_iter()
        .map(|m| DMatrix::from_fn(n, n, |i, j| m[(n - 1 - i, n - 1 - j)]))
        .collect()
}

/// Clenshaw-Curtis weights on Lobatto points of `[-1, 1]`.
pub fn clenshaw_curtis(n: usize) -> DVector<f64> {
    let big_n = n - 1;
    let mut w = DVector::<f64>::zeros(n);
    let theta: Vec<f64> = (0..n).map(|k| PI * k as f64 / big_n as f64).collect();
    let interior: Vec<usize> = (1..big_n).collect();
    let mut v = vec![1.0; interior.len()];
    if big_n % 2 == 0 {
        let w0 = 1.0 / ((big_n * big_n) as f64 - 1.0);
        w[0] = w0;
        w[big_n] = w0;
        for k in 1..big_n / 2 {
            for (idx, &j) in interior.iter().enumerate() {
                v[idx] -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (idx, &j) in interior.iter().enumerate() {
            v[idx] -= (big_n as f64 * theta[j]).cos() / ((big_n * big_n) as f64 - 1.0);
        }
    } else {
        let w0 = 1.0 / (big_n * big_n) as f64;
        w[0] = w0;
        w[big_n] = w0;
        for k in 1..=(big_n - 1) / 2 {
            for (idx, &j) in interior.iter().enumerate() {
                v[idx] -= 2.0 * (2.0 * k as f64 * theta[j]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for (idx, &j) in interior.iter().enumerate() {
        w[j] = 2.0 * v[idx] / big_n as f64;
    }
    w
}

/// Chebyshev coefficients `a_m` of the interpolant through values on the
/// increasing Lobatto nodes, so that `f(x) = sum a_m T_m(x)`.
pub fn cheb_coeffs(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let big_n = n - 1;
    (0..n)
        .map(|m| {
            let mut s = 0.0;
            for i in 0..n {
                let fi = f[big_n - i];
                let wt = if i == 0 || i == big_n { 0.5 } else { 1.0 };
                s += wt * fi * (PI * (m * i % (2 * big_n)) as f64 / big_n as f64).cos();
            }
            let cm = if m == 0 || m == big_n { 2.0 } else { 1.0 };
            2.0 * s / (big_n as f64 * cm)
        })
        .collect()
}

/// Clenshaw evaluation of `sum a_m T_m(x)`.
pub fn cheb_eval(a: &[f64], x: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &am in a.iter().skip(1).rev() {
        let b0 = 2.0 * x * b1 - b2 + am;
        b2 = b1;
        b1 = b0;
    }
    x * b1 - b2 + a.first().copied().unwrap_or(0.0)
}

/// Fornberg finite-difference weights for derivatives `0..=m` at `z`.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

fn fd_matrix(x: &[f64], order: usize) -> DMatrix<f64> {
    let n = x.len();
    let central = 2 * ((order + 3) / 2) + 1;
    let half = (central - 1) / 2;
    let one_sided = order + 4;
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (lo, size) = if i >= half && i + half < n {
            (i - half, central)
        } else {
            let lo = (i as isize - one_sided as isize / 2).clamp(0, (n - one_sided) as isize) as usize;
            (lo, one_sided)
        };
        let c = fornberg(x[i], &x[lo..lo + size], order);
        for (j, v) in c[order].iter().enumerate() {
            d[(i, lo + j)] = *v;
        }
    }
    d
}

/// Trapezoid weights with symmetric end corrections chosen so that the rule
/// is exact for polynomials of degree five.
fn gregory_weights(n: usize, h: f64) -> DVector<f64> {
    let m = 3;
    let big_n = (n - 1) as f64;
    let centre = 0.5 * big_n;
    // unknowns: w_0..w_{m-1} (mirrored); the rest equal h
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (row, p) in [0usize, 2, 4].iter().enumerate() {
        // integral of (x - centre)^p over [0, N] in index units
        let exact = 2.0 * centre.powi(*p as i32 + 1) / (*p as f64 + 1.0);
        let mut interior = 0.0;
        for j in m..(n - m) {
            interior += (j as f64 - centre).powi(*p as i32);
        }
        for col in 0..m {
            a[(row, col)] = 2.0 * (col as f64 - centre).powi(*p as i32);
        }
        b[row] = exact - interior;
    }
    let sol = a.lu().solve(&b).expect("end-correction system is regular for n >= 8");
    let mut w = DVector::<f64>::from_element(n, h);
    for j in 0..m {
        w[j] = sol[j] * h;
        w[n - 1 - j] = sol[j] * h;
    }
    w
}

/// Orthonormal basis of grid functions with `W(R1) = W(R2) = 0` and
/// `(D1 W)(R2) = 0`.
#[derive(Debug, Clone)]
pub struct TrialSpace {
    pub grid: Arc<RadialGrid>,
    pub basis: DMatrix<f64>,
}

pub fn build_trial_space(grid: &Arc<RadialGrid>) -> Result<TrialSpace> {
    let n = grid.n;
    let m = n - 2;
    let d: DVector<f64> = DVector::from_iterator(m, (1..n - 1).map(|j| grid.d1()[(n - 1, j)]));
    let norm = d.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::RankDeficiency);
    }
    let u = &d / norm;
    let mut v = u.clone();
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += s;
    let vnorm2 = v.norm_squared();
    if vnorm2 < 1e-300 {
        return Err(Error::RankDeficiency);
    }
    let mut basis = DMatrix::<f64>::zeros(n, n - 3);
    for col in 1..m {
        // column `col` of I - 2 v v^T / |v|^2
        let factor = 2.0 * v[col] / vnorm2;
        for row in 0..m {
            let e = if row == col { 1.0 } else { 0.0 };
            basis[(row + 1, col - 1)] = e - factor * v[row];
        }
    }
    Ok(TrialSpace { grid: Arc::clone(grid), basis })
}

impl TrialSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn expand(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }
}
