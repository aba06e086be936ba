//! Small dense helpers on top of nalgebra: ridge-regularized symmetric
//! factorizations and block embedding.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, ScmError};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

fn mean_diag(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let tr = m.trace() / m.nrows() as f64;
    if tr.is_finite() && tr > 0.0 {
        tr
    } else {
        1.0
    }
}

fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Symmetric positive-definite factorization of `m + ridge·I`.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub ridge: f64,
}

impl SpdFactor {
    /// Factor `m + rel_ridge·(trace(m)/dim)·I` in one attempt.
    pub fn with_relative_ridge(m: &Mat, rel_ridge: f64) -> Result<Self> {
        let ridge = rel_ridge * mean_diag(m);
        let mut a = symmetrize(m);
        for i in 0..a.nrows() {
            a[(i, i)] += ridge;
        }
        Cholesky::new(a)
            .map(|chol| SpdFactor { chol, ridge })
            .ok_or_else(|| {
                ScmError::Numeric(format!(
                    "matrix of dimension {} is not positive definite (ridge {ridge:.3e})",
                    m.nrows()
                ))
            })
    }

    /// Plain factorization first, then relative ridges `start, 10·start, …` up to `max`.
    pub fn escalating(m: &Mat, start: f64, max: f64) -> Result<Self> {
        if let Some(chol) = Cholesky::new(symmetrize(m)) {
            return Ok(SpdFactor { chol, ridge: 0.0 });
        }
        let mut rel = start;
        while rel <= max * (1.0 + 1e-9) {
            if let Ok(f) = Self::with_relative_ridge(m, rel) {
                log::warn!(
                    "weight matrix of dimension {} needed ridge {:.1e} x mean diagonal",
                    m.nrows(),
                    rel
                );
                return Ok(f);
            }
            rel *= 10.0;
        }
        Err(ScmError::Numeric(format!(
            "matrix of dimension {} stays singular after ridge {max:.1e}; use fewer blocks or more subjects",
            m.nrows()
        )))
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> Mat {
        self.chol.inverse()
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

/// Solve a general square system, failing loudly on singularity.
pub fn solve_square(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| ScmError::Numeric(format!("{what} is singular")))
}

/// Numerical rank via singular values with relative tolerance.
pub fn rank(m: &Mat, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * max.max(f64::MIN_POSITIVE)).count()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
