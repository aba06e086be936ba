//! Mean models, canonical links and the per-block polynomial basis.
//!
//! Within block `j` with edges `(c_{j-1}, c_j)` the functional coefficient of
//! covariate `u` is `β_ju(t) = Σ_d γ_{j,ud} s^d`, where `s = t - c_{j-1}` or,
//! under the scaled parameterization, `s = (t - c_{j-1}) / (c_j - c_{j-1})`.
//!
//! Parameter ordering inside a block is covariate-major, degree-minor,
//! followed by the scalar effects: `θ_j = (γ_j1, …, γ_jq, η)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::linalg::{Mat, Vector};

/// Linear predictors beyond this magnitude are rejected under the log link.
pub const LOG_LINK_BOUND: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Identity,
    Log,
}

impl LinkFunction {
    /// `h(u)`.
    pub fn inverse(self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => u,
            LinkFunction::Log => u.exp(),
        }
    }

    /// `h'(u)`.
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Log => u.exp(),
        }
    }

    /// `(h(u), h'(u))`, rejecting non-finite or overflowing predictors.
    fn eval_checked(self, u: f64, obs: usize) -> Result<(f64, f64)> {
        if !u.is_finite() || (self == LinkFunction::Log && u.abs() > LOG_LINK_BOUND) {
            return Err(ScmError::Numeric(format!(
                "linear predictor {u} at observation {obs} is out of range for the {self:?} link"
            )));
        }
        Ok((self.inverse(u), self.derivative(u)))
    }
}

/// Degrees of the per-block polynomial expansion, one per functional covariate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degrees: Vec<usize>,
    pub scaled: bool,
}

impl BasisSpec {
    pub fn new(degrees: Vec<usize>, scaled: bool) -> Result<Self> {
        if let Some(u) = degrees.iter().position(|&d| d == 0) {
            return Err(ScmError::Config(format!(
                "basis degree for functional covariate {} must be at least 1",
                u + 1
            )));
        }
        Ok(BasisSpec { degrees, scaled })
    }

    /// Same degree for each of `q` covariates.
    pub fn uniform(q: usize, degree: usize, scaled: bool) -> Result<Self> {
        Self::new(vec![degree; q], scaled)
    }

    pub fn q(&self) -> usize {
        self.degrees.len()
    }

    /// `Σ_u (d_u + 1)`: the γ part of a block parameter.
    pub fn gamma_dim(&self) -> usize {
        self.degrees.iter().map(|d| d + 1).sum()
    }

    /// Offset of covariate `u`'s coefficients inside a block parameter.
    pub fn gamma_offset(&self, u: usize) -> usize {
        self.degrees[..u].iter().map(|d| d + 1).sum()
    }

    pub fn min_degree(&self) -> Option<usize> {
        self.degrees.iter().copied().min()
    }
}

/// Everything needed to evaluate the mean of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub block: usize,
    pub edges: (f64, f64),
    pub basis: BasisSpec,
    pub link: LinkFunction,
    pub p: usize,
}

impl BlockModel {
    pub fn q(&self) -> usize {
        self.basis.q()
    }

    /// `dim(θ_j) = Σ_u (d_u + 1) + p`.
    pub fn dim(&self) -> usize {
        self.basis.gamma_dim() + self.p
    }
}

fn local_coordinate(t: f64, edges: (f64, f64), scaled: bool) -> Result<f64> {
    let (lo, hi) = edges;
    let span = hi - lo;
    let tol = 1e-12 * span.abs().max(1.0);
    if !(t >= lo - tol && t <= hi + tol) {
        return Err(ScmError::Domain(format!(
            "time {t} lies outside block [{lo}, {hi}]"
        )));
    }
    let s = (t - lo).max(0.0);
    Ok(if scaled { s / span } else { s })
}

/// `ξ(t) = (1, s, s², …, s^d)` on the closed block `[c_{j-1}, c_j]`.
pub fn basis_row(t: f64, edges: (f64, f64), degree: usize, scaled: bool) -> Result<Vec<f64>> {
    let s = local_coordinate(t, edges, scaled)?;
    let mut row = Vec::with_capacity(degree + 1);
    let mut pow = 1.0;
    for _ in 0..=degree {
        row.push(pow);
        pow *= s;
    }
    Ok(row)
}

/// `dξ(t)/dt`, including the `1/(c_j - c_{j-1})` factor of the scaled basis.
pub fn basis_derivative_row(
    t: f64,
    edges: (f64, f64),
    degree: usize,
    scaled: bool,
) -> Result<Vec<f64>> {
    let s = local_coordinate(t, edges, scaled)?;
    let chain = if scaled { 1.0 / (edges.1 - edges.0) } else { 1.0 };
    let mut row = vec![0.0; degree + 1];
    let mut pow = 1.0;
    for (d, slot) in row.iter_mut().enumerate().skip(1) {
        *slot = d as f64 * pow * chain;
        pow *= s;
    }
    Ok(row)
}

/// Full design row `(X_u·ξ_u(t))_u ++ Z` for one observation.
pub fn design_row(t: f64, x: &[f64], z: &[f64], model: &BlockModel) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(model.dim());
    for (u, &deg) in model.basis.degrees.iter().enumerate() {
        let xi = basis_row(t, model.edges, deg, model.basis.scaled)?;
        row.extend(xi.into_iter().map(|b| b * x[u]));
    }
    row.extend_from_slice(z);
    Ok(row)
}

/// Mean `μ` and Jacobian `∂μ/∂θ_j` for one subject's observations in a block.
///
/// `x` is `m × q`, `z` is `m × p`. Jacobian columns follow the block parameter
/// ordering (covariate-major, degree-minor, then η).
pub fn mean_and_jacobian(
    theta: &Vector,
    x: &Mat,
    z: &Mat,
    times: &[f64],
    model: &BlockModel,
) -> Result<(Vector, Mat)> {
    let m = times.len();
    let k = model.dim();
    if theta.len() != k || x.nrows() != m || z.nrows() != m || x.ncols() != model.q() || z.ncols() != model.p {
        return Err(ScmError::Config(format!(
            "dimension mismatch in block {}: θ has {}, expected {k}; design {}x{} / {}x{} for {m} times",
            model.block,
            theta.len(),
            x.nrows(),
            x.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    let mut mu = Vector::zeros(m);
    let mut jac = Mat::zeros(m, k);
    let mut row = vec![0.0; k];
    for (obs, &t) in times.iter().enumerate() {
        let s = local_coordinate(t, model.edges, model.basis.scaled)?;
        let mut col = 0;
        for (u, &deg) in model.basis.degrees.iter().enumerate() {
            let xv = x[(obs, u)];
            let mut pow = 1.0;
            for _ in 0..=deg {
                row[col] = xv * pow;
                pow *= s;
                col += 1;
            }
        }
        for kk in 0..model.p {
            row[col + kk] = z[(obs, kk)];
        }
        let eta: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        let (h, dh) = model.link.eval_checked(eta, obs)?;
        mu[obs] = h;
        for (c, r) in row.iter().enumerate() {
            jac[(obs, c)] = dh * r;
        }
    }
    Ok((mu, jac))
}
