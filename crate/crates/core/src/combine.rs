//! Combination of block summaries into the smooth constrained estimate.
//!
//! The stacked first-order conditions are `Ḡ = vec_j[∇ḡ_jᵀ C_j⁻¹ ḡ_j]` with
//! per-subject contributions `G_i`, plug-in covariance `V = N⁻¹ Σ G_i G_iᵀ`
//! and Jacobian `S` whose row block `j` is `Γ_j E_j`, `Γ_j = ∇ḡ_jᵀC_j⁻¹∇ḡ_j`.
//!
//! Covariance convention: [`covariance`] returns the covariance of `θ̂*`
//! itself, i.e. the large-sample covariance of `√N(θ̂* − θ*)` divided by `N`,
//! so standard errors are read straight off its diagonal.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraint::{ConstraintMap, ParamLayout};
use crate::error::{Result, ScmError};
use crate::linalg::{Mat, SpdFactor, Vector};
use crate::partition::Partition;
use crate::qif::{factor_c, BlockFit};

/// Start and cap of the relative ridge used when factoring `V`.
pub const V_RIDGE_START: f64 = 1e-10;
pub const V_RIDGE_MAX: f64 = 1e-6;

/// First-order moment contributions of one block at one `θ_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMoments {
    pub block: usize,
    pub subjects: Vec<usize>,
    pub theta: Vector,
    /// Rows `G_ij = ∇ḡᵀ C⁻¹ g_ij` (`N × dim θ_j`).
    pub g: Mat,
    /// `Γ_j = ∇ḡᵀ C⁻¹ ∇ḡ`.
    pub gamma: Mat,
}

impl BlockMoments {
    pub fn from_scores(block: usize, subjects: Vec<usize>, theta: Vector, scores: &Mat, jacobian: &Mat) -> Result<Self> {
        let c = crate::qif::c_from_scores(scores);
        let cf = factor_c(&c).map_err(|e| e.context(format!("block {}", block + 1)))?;
        let cinv_jac = cf.solve(jacobian);
        let g = scores * &cinv_jac;
        let gamma = jacobian.transpose() * &cinv_jac;
        Ok(BlockMoments { block, subjects, theta, g, gamma })
    }

    pub fn from_fit(fit: &BlockFit) -> Result<Self> {
        if !fit.converged {
            return Err(ScmError::Numeric(format!(
                "block {} did not converge; refusing to combine an unconverged fit",
                fit.block + 1
            )));
        }
        Self::from_scores(fit.block, fit.subjects.clone(), fit.theta.clone(), &fit.scores, &fit.jacobian)
    }
}

/// Re-evaluates block moments at arbitrary block parameters (needs raw data).
pub trait MomentSource: Sync {
    fn blocks(&self) -> usize;
    fn evaluate_block(&self, j: usize, theta_j: &Vector) -> Result<BlockMoments>;
}

/// `Ḡ`, `G_i`, `S`, `V` stacked over blocks.
#[derive(Clone, Debug)]
pub struct StackedMoments {
    pub n: usize,
    pub gbar: Vector,
    /// `N × K` per-subject stacked contributions.
    pub gi: Mat,
    /// `K × dim θ`.
    pub s: Mat,
    /// `K × K`.
    pub v: Mat,
    pub offsets: Vec<usize>,
    pub gammas: Vec<Mat>,
    /// `θ_j` at which each block was evaluated.
    pub thetas: Vec<Vector>,
}

impl StackedMoments {
    pub fn factor_v(&self) -> Result<SpdFactor> {
        SpdFactor::escalating(&self.v, V_RIDGE_START, V_RIDGE_MAX)
            .map_err(|e| e.context("stacked moment covariance"))
    }

    /// `ḠᵀV⁻¹Ḡ`.
    pub fn quadratic_form(&self) -> Result<f64> {
        let f = self.factor_v()?;
        Ok(self.gbar.dot(&f.solve_vec(&self.gbar)))
    }
}

/// Stack block moments; every block must hold the same subjects in the same order.
pub fn stack(moments: &[BlockMoments], layout: &ParamLayout) -> Result<StackedMoments> {
    if moments.len() != layout.blocks {
        return Err(ScmError::Config(format!(
            "expected {} blocks, got {}",
            layout.blocks,
            moments.len()
        )));
    }
    let subjects = &moments[0].subjects;
    if let Some(m) = moments.iter().find(|m| &m.subjects != subjects) {
        return Err(ScmError::Data(format!(
            "block {} holds a different subject set than block 1; every subject must be observed in every block",
            m.block + 1
        )));
    }
    let n = subjects.len();
    let dims: Vec<usize> = moments.iter().map(|m| m.theta.len()).collect();
    let k: usize = dims.iter().sum();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut off = 0;
    for d in &dims {
        offsets.push(off);
        off += d;
    }
    let mut gi = Mat::zeros(n, k);
    let mut s = Mat::zeros(k, layout.dim());
    for (j, m) in moments.iter().enumerate() {
        if m.g.nrows() != n || m.g.ncols() != dims[j] || dims[j] != layout.block_dim() {
            return Err(ScmError::Config(format!("block {} moment dimensions are inconsistent", j + 1)));
        }
        gi.view_mut((0, offsets[j]), (n, dims[j])).copy_from(&m.g);
        for (col_local, &col_global) in layout.block_indices(j).iter().enumerate() {
            for r in 0..dims[j] {
                s[(offsets[j] + r, col_global)] += m.gamma[(r, col_local)];
            }
        }
    }
    let nf = n as f64;
    let gbar = Vector::from_iterator(k, (0..k).map(|c| gi.column(c).sum() / nf));
    let v = gi.transpose() * &gi / nf;
    Ok(StackedMoments {
        n,
        gbar,
        gi,
        s,
        v,
        offsets,
        gammas: moments.iter().map(|m| m.gamma.clone()).collect(),
        thetas: moments.iter().map(|m| m.theta.clone()).collect(),
    })
}

/// `(R̃ᵀSᵀV⁻¹SR̃, S R̃, V factor)`.
fn reduced_information(sm: &StackedMoments, cmap: &ConstraintMap) -> Result<(Mat, Mat, SpdFactor)> {
    let vf = sm.factor_v()?;
    let sr = &sm.s * &cmap.rtilde;
    let info = sr.transpose() * vf.solve(&sr);
    Ok((info, sr, vf))
}

fn factor_bracket(info: &Mat, cmap: &ConstraintMap, lambda: f64) -> Result<SpdFactor> {
    let bracket = info + &cmap.dtilde * lambda;
    SpdFactor::with_relative_ridge(&bracket, 0.0).map_err(|_| {
        ScmError::Numeric(format!(
            "combination matrix is singular at lambda = {lambda}; use a larger lambda or fewer blocks"
        ))
    })
}

/// One-step SCM estimate of `θ*` from moments evaluated at the block estimates.
pub fn scm_one_step(sm: &StackedMoments, cmap: &ConstraintMap, lambda: f64) -> Result<Vector> {
    if !(lambda >= 0.0) {
        return Err(ScmError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let (info, sr, vf) = reduced_information(sm, cmap)?;
    // b = vec_j(Γ_j θ̂_j): the diagonal blocks of S applied to the block estimates
    let k = sm.gbar.len();
    let mut b = Vector::zeros(k);
    for (j, (gamma, theta)) in sm.gammas.iter().zip(&sm.thetas).enumerate() {
        b.rows_mut(sm.offsets[j], theta.len()).copy_from(&(gamma * theta));
    }
    let rhs = sr.transpose() * vf.solve_vec(&b);
    Ok(factor_bracket(&info, cmap, lambda)?.solve_vec(&rhs))
}

/// Sandwich covariance `B⁻¹ M B⁻¹ / N`, `M = R̃ᵀSᵀV⁻¹SR̃`, `B = M + λD̃`.
pub fn covariance(sm: &StackedMoments, cmap: &ConstraintMap, lambda: f64) -> Result<Mat> {
    let (info, _, _) = reduced_information(sm, cmap)?;
    let bf = factor_bracket(&info, cmap, lambda)?;
    let left = bf.solve(&info);
    let cov = bf.solve(&left.transpose()) / sm.n as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Effective degrees of freedom `trace{(Q̈ + λD̃)⁻¹Q̈}` in the reduced space.
///
/// The smoothing-selection criterion is built on this term; it is kept in one
/// place so the trace definition can be swapped.
pub fn effective_dof(info: &Mat, cmap: &ConstraintMap, lambda: f64) -> Result<f64> {
    Ok(factor_bracket(info, cmap, lambda)?.solve(info).trace())
}

/// Moments of every block at `θ = R̃θ*`, optionally spreading blocks over workers.
pub fn evaluate_at<S: MomentSource + ?Sized>(
    source: &S,
    cmap: &ConstraintMap,
    theta_star: &Vector,
    block_parallel: bool,
) -> Result<StackedMoments> {
    let theta = cmap.expand(theta_star);
    let layout = &cmap.layout;
    let eval = |j: usize| source.evaluate_block(j, &layout.select_block(&theta, j));
    let moments: Vec<BlockMoments> = par_map(source.blocks(), block_parallel, eval)?;
    stack(&moments, layout)
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Send, F>(n: usize, _parallel: bool, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n).map(f).collect()
}

/// How candidate smoothing values are spread over workers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Schema {
    /// Every λ candidate on its own worker, each re-evaluating all blocks.
    #[default]
    LambdaParallel,
    /// λ candidates in sequence, block re-evaluation spread over workers.
    BlockParallel,
}

impl Schema {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Schema::LambdaParallel),
            2 => Ok(Schema::BlockParallel),
            _ => Err(ScmError::Config(format!("schema must be 1 or 2, got {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Schema::LambdaParallel => 1,
            Schema::BlockParallel => 2,
        }
    }
}

/// One row of the smoothing-selection table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcvEntry {
    pub lambda: f64,
    pub numerator: f64,
    pub effective_dof: f64,
    /// `None` when `1 − dof/N ≤ 0`.
    pub gcv: Option<f64>,
}

/// Everything computed for one λ candidate.
#[derive(Clone, Debug)]
pub struct LambdaFit {
    pub entry: GcvEntry,
    pub theta_star: Vector,
    /// Moments re-evaluated at `R̃θ̂*(λ)`.
    pub moments: StackedMoments,
}

/// Fit and score one λ: one-step estimate, re-evaluation, criterion.
pub fn evaluate_lambda<S: MomentSource + ?Sized>(
    lambda: f64,
    base: &StackedMoments,
    cmap: &ConstraintMap,
    source: &S,
    block_parallel: bool,
) -> Result<LambdaFit> {
    let theta_star = scm_one_step(base, cmap, lambda)?;
    let moments = evaluate_at(source, cmap, &theta_star, block_parallel)?;
    let (info, _, vf) = reduced_information(&moments, cmap)?;
    let numerator = moments.gbar.dot(&vf.solve_vec(&moments.gbar));
    let dof = effective_dof(&info, cmap, lambda)?;
    let denom = 1.0 - dof / moments.n as f64;
    let gcv = (denom > 0.0).then(|| numerator / (denom * denom));
    Ok(LambdaFit { entry: GcvEntry { lambda, numerator, effective_dof: dof, gcv }, theta_star, moments })
}

#[derive(Clone, Debug)]
pub struct GcvSelection {
    pub table: Vec<GcvEntry>,
    pub best: LambdaFit,
}

/// Evaluate every λ under the chosen schema and keep the GCV minimizer
/// (ties go to the larger λ).
pub fn gcv<S: MomentSource + ?Sized>(
    grid: &[f64],
    base: &StackedMoments,
    cmap: &ConstraintMap,
    source: &S,
    schema: Schema,
) -> Result<GcvSelection> {
    if grid.is_empty() {
        return Err(ScmError::Config("the lambda grid is empty".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(ScmError::Config(format!("lambda values must be finite and non-negative, got {l}")));
    }
    let fits: Vec<LambdaFit> = match schema {
        Schema::LambdaParallel => {
            par_map(grid.len(), true, |l| evaluate_lambda(grid[l], base, cmap, source, false))?
        }
        Schema::BlockParallel => grid
            .iter()
            .map(|&l| evaluate_lambda(l, base, cmap, source, true))
            .collect::<Result<_>>()?,
    };
    let mut best: Option<usize> = None;
    for (i, f) in fits.iter().enumerate() {
        let Some(g) = f.entry.gcv else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let (bg, bl) = (fits[b].entry.gcv.unwrap(), fits[b].entry.lambda);
                if g < bg || (g == bg && f.entry.lambda > bl) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    let best = best.ok_or_else(|| {
        ScmError::Numeric("every lambda candidate has effective degrees of freedom at or above N".into())
    })?;
    let table = fits.iter().map(|f| f.entry.clone()).collect();
    let best = fits.into_iter().nth(best).expect("index in range");
    Ok(GcvSelection { table, best })
}

/// Standard normal quantile `z_{1−α/2}`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ScmError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub u: usize,
    pub t: f64,
    pub beta_hat: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub index: usize,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

fn linear_band(a: &Vector, theta_star: &Vector, cov: &Mat, z: f64) -> (f64, f64, f64, f64) {
    let est = a.dot(theta_star);
    let var = a.dot(&(cov * a)).max(0.0);
    let se = var.sqrt();
    (est, se, est - z * se, est + z * se)
}

/// Pointwise `β̂_u(t)` with normal bands for every covariate and grid point.
pub fn curve_and_bands(
    theta_star: &Vector,
    cov: &Mat,
    cmap: &ConstraintMap,
    part: &Partition,
    scaled: bool,
    grid: &[f64],
    alpha: f64,
) -> Result<Vec<CurvePoint>> {
    let z = normal_quantile(alpha)?;
    let layout = &cmap.layout;
    let mut out = Vec::with_capacity(grid.len() * layout.q());
    for u in 0..layout.q() {
        for &t in grid {
            let j = part.locate(t).ok_or_else(|| {
                let (lo, hi) = part.domain();
                ScmError::Domain(format!("grid point {t} is outside [{lo}, {hi}]"))
            })?;
            let x = layout.curve_row(part, scaled, u, j, t, false)?;
            let a = cmap.rtilde.transpose() * x;
            let (beta_hat, se, lower, upper) = linear_band(&a, theta_star, cov, z);
            out.push(CurvePoint { u: u + 1, t, beta_hat, se, lower, upper });
        }
    }
    Ok(out)
}

/// `η̂` with standard errors and intervals.
pub fn eta_estimates(theta_star: &Vector, cov: &Mat, cmap: &ConstraintMap, alpha: f64) -> Result<Vec<ScalarEstimate>> {
    let z = normal_quantile(alpha)?;
    let layout = &cmap.layout;
    Ok((0..layout.p)
        .map(|k| {
            let a = cmap.rtilde.transpose() * layout.eta_row(k);
            let (estimate, se, lower, upper) = linear_band(&a, theta_star, cov, z);
            ScalarEstimate { index: k + 1, estimate, se, lower, upper }
        })
        .collect())
}

/// Result of the iterated constrained GMM reference solver.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub theta_star: Vector,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `Ḡ(R̃θ*)ᵀ V₀⁻¹ Ḡ(R̃θ*) + λθ*ᵀD̃θ*` with `V₀` fixed.
pub fn gmm_objective<S: MomentSource + ?Sized>(
    source: &S,
    cmap: &ConstraintMap,
    v0: &SpdFactor,
    lambda: f64,
    theta_star: &Vector,
) -> Result<(f64, Vector)> {
    let sm = evaluate_at(source, cmap, theta_star, false)?;
    let q = sm.gbar.dot(&v0.solve_vec(&sm.gbar)) + lambda * theta_star.dot(&(&cmap.dtilde * theta_star));
    Ok((q, sm.gbar))
}

/// Iterated minimizer of the penalized constrained GMM objective with the
/// weight frozen at the block estimates. Gauss–Newton with a central
/// difference Jacobian of `Ḡ(R̃θ*)` and step halving.
pub fn gmm_iterative<S: MomentSource + ?Sized>(
    source: &S,
    cmap: &ConstraintMap,
    base: &StackedMoments,
    lambda: f64,
    init: Vector,
    tol: f64,
    max_iter: usize,
) -> Result<GmmFit> {
    let v0 = base.factor_v()?;
    let mut theta = init;
    let (mut obj, mut gbar) = gmm_objective(source, cmap, &v0, lambda, &theta)?;
    let initial_objective = obj;
    let r = theta.len();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut jac = Mat::zeros(gbar.len(), r);
        for c in 0..r {
            let h = 1e-6 * theta[c].abs().max(1.0);
            let mut up = theta.clone();
            up[c] += h;
            let mut dn = theta.clone();
            dn[c] -= h;
            let gu = evaluate_at(source, cmap, &up, false)?.gbar;
            let gd = evaluate_at(source, cmap, &dn, false)?.gbar;
            jac.set_column(c, &((gu - gd) / (2.0 * h)));
        }
        let lhs = jac.transpose() * v0.solve(&jac) + &cmap.dtilde * lambda;
        let rhs = jac.transpose() * v0.solve_vec(&gbar) + &cmap.dtilde * &theta * lambda;
        let step = -SpdFactor::escalating(&lhs, 1e-12, 1e-6)?.solve_vec(&rhs);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &theta + &step * scale;
            if let Ok((o, g)) = gmm_objective(source, cmap, &v0, lambda, &trial) {
                if o <= obj {
                    theta = trial;
                    obj = o;
                    gbar = g;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        let moved = (&step * scale).amax();
        if !accepted || moved < tol {
            converged = accepted || step.amax() < tol.sqrt();
            break;
        }
    }
    if !converged {
        log::warn!("iterated GMM stopped after {iterations} iterations without meeting tolerance {tol:e}");
    }
    Ok(GmmFit { theta_star: theta, objective: obj, initial_objective, iterations, converged })
}
