//! Not-a-knot cubic splines on a fixed set of knots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear map from knot values to knot second derivatives, reusable for any
/// data on the same knots.
#[derive(Debug, Clone)]
pub struct SplineKnots {
    pub x: Vec<f64>,
    to_m: DMatrix<f64>,
}

impl SplineKnots {
    pub fn new(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(Error::Config("a cubic spline needs at least 4 knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("spline knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DMatrix::<f64>::zeros(n, n);
        for i in 1..n - 1 {
            a[(i, i - 1)] = h[i - 1];
            a[(i, i)] = 2.0 * (h[i - 1] + h[i]);
            a[(i, i + 1)] = h[i];
            b[(i, i + 1)] = 6.0 / h[i];
            b[(i, i)] = -6.0 / h[i] - 6.0 / h[i - 1];
            b[(i, i - 1)] = 6.0 / h[i - 1];
        }
        // continuity of the third derivative across the second and penultimate knots
        a[(0, 0)] = h[1];
        a[(0, 1)] = -(h[0] + h[1]);
        a[(0, 2)] = h[0];
        let k = n - 1;
        a[(k, k)] = h[k - 2];
        a[(k, k - 1)] = -(h[k - 2] + h[k - 1]);
        a[(k, k - 2)] = h[k - 1];
        let lu = a.lu();
        let to_m = lu
            .solve(&b)
            .ok_or_else(|| Error::SingularSystem("spline system".into()))?;
        Ok(Self { x: x.to_vec(), to_m })
    }

    pub fn second_derivatives(&self, y: &[f64]) -> Vec<f64> {
        let yv = DVector::from_column_slice(y);
        (&self.to_m * yv).as_slice().to_vec()
    }

    pub fn segment(&self, r: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&r).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value, first and second derivative at `r` for data `y` with second
    /// derivatives `m`.
    pub fn eval3(&self, y: &[f64], m: &[f64], r: f64) -> (f64, f64, f64) {
        let i = self.segment(r);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - r) / h;
        let b = (r - self.x[i]) / h;
        let v = a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
        let d = (y[i + 1] - y[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * m[i] + (3.0 * b * b - 1.0) / 6.0 * h * m[i + 1];
        let dd = a * m[i] + b * m[i + 1];
        (v, d, dd)
    }

    pub fn eval(&self, y: &[f64], m: &[f64], r: f64) -> f64 {
        let i = self.segment(r);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - r) / h;
        let b = (r - self.x[i]) / h;
        a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    }
}

#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: SplineKnots,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Config("spline data length mismatch".into()));
        }
        let knots = SplineKnots::new(x)?;
        let m = knots.second_derivatives(y);
        Ok(Self { knots, y: y.to_vec(), m })
    }

    pub fn eval3(&self, r: f64) -> (f64, f64, f64) {
        self.knots.eval3(&self.y, &self.m, r)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }
}
