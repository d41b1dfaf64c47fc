//! Small dense helpers for symmetric-definite pencils.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `X^T diag(d) X`, symmetrized.
pub fn gram(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut dx = x.clone();
    for (i, mut row) in dx.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let mut g = x.transpose() * dx;
    symmetrize(&mut g);
    g
}

/// Cholesky factor of the definite side of a pencil, used to map `A x = t B x`
/// onto a standard symmetric problem.
#[derive(Debug, Clone)]
pub struct Reducer {
    l: DMatrix<f64>,
}

impl Reducer {
    pub fn new(b: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let chol = b.clone().cholesky().ok_or(Error::NonSpd(what))?;
        Ok(Self { l: chol.l() })
    }

    /// `L^{-1} A L^{-T}`.
    pub fn reduce(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self
            .l
            .solve_lower_triangular(a)
            .ok_or_else(|| Error::EigenFailure("triangular solve failed".into()))?;
        let mut c = self
            .l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| Error::EigenFailure("triangular solve failed".into()))?;
        symmetrize(&mut c);
        Ok(c)
    }

    /// Maps an eigenvector of the reduced problem back: `x = L^{-T} y`.
    pub fn back(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.l
            .tr_solve_lower_triangular(y)
            .ok_or_else(|| Error::EigenFailure("triangular solve failed".into()))
    }
}

pub fn eigenvalues_sorted(c: &DMatrix<f64>) -> Result<Vec<f64>> {
    let vals = c.clone().symmetric_eigenvalues();
    let mut v: Vec<f64> = vals.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(v)
}

/// Eigenpairs sorted by ascending eigenvalue.
pub fn eigen_sorted(c: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let se = SymmetricEigen::try_new(c.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::EigenFailure("symmetric eigen iteration failed".into()))?;
    let mut idx: Vec<usize> = (0..se.eigenvalues.len()).collect();
    if se.eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    idx.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let vals = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(c.nrows(), idx.len(), |r, j| se.eigenvectors[(r, idx[j])]);
    Ok((vals, vecs))
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for x in v.iter() {
        if x.abs() > best * (1.0 + 1e-9) {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}
