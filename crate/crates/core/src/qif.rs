//! Per-block quadratic inference function estimation.
//!
//! For subject `i` in block `j` the extended score stacks
//! `Jᵀ A^{-1/2} R_w A^{-1/2} (Y − μ)` over the working-correlation basis
//! matrices `R_w`. The block estimate minimizes `N·ḡᵀ C⁻¹ ḡ` with
//! `C = N⁻¹ Σ_i g_i g_iᵀ` recomputed at every iterate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::linalg::{Mat, SpdFactor, Vector};
use crate::model::{mean_and_jacobian, BlockModel, LinkFunction};
use crate::partition::BlockData;

/// Relative ridge added to `C` before factorization.
pub const DEFAULT_C_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WorkingCorrelation {
    Independence,
    #[default]
    Ar1,
    Exchangeable,
}

impl WorkingCorrelation {
    /// Number of basis matrices `W`.
    pub fn basis_count(self) -> usize {
        match self {
            WorkingCorrelation::Independence => 1,
            _ => 2,
        }
    }

    /// Dense `R_w` of size `m` (`w` is zero-based: `R_0 = I`).
    pub fn basis_matrix(self, w: usize, m: usize) -> Mat {
        let mut r = Mat::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                r[(a, b)] = match (w, self) {
                    (0, _) => (a == b) as u8 as f64,
                    (_, WorkingCorrelation::Ar1) => (a.abs_diff(b) == 1) as u8 as f64,
                    (_, WorkingCorrelation::Exchangeable) => (a != b) as u8 as f64,
                    (_, WorkingCorrelation::Independence) => 0.0,
                };
            }
        }
        r
    }

    /// `R_w · v` without forming `R_w`.
    fn apply(self, w: usize, v: &[f64], out: &mut [f64]) {
        let m = v.len();
        match (w, self) {
            (0, _) => out.copy_from_slice(v),
            (_, WorkingCorrelation::Ar1) => {
                for a in 0..m {
                    let left = if a > 0 { v[a - 1] } else { 0.0 };
                    let right = if a + 1 < m { v[a + 1] } else { 0.0 };
                    out[a] = left + right;
                }
            }
            (_, WorkingCorrelation::Exchangeable) => {
                let total: f64 = v.iter().sum();
                for a in 0..m {
                    out[a] = total - v[a];
                }
            }
            (_, WorkingCorrelation::Independence) => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }
}

/// Block model plus the working correlation and marginal-variance scale.
///
/// The marginal variance is `A = φ·I` under the identity link and
/// `A = diag(μ)` under the log link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QifModel {
    pub model: BlockModel,
    pub corr: WorkingCorrelation,
    pub dispersion: f64,
}

impl QifModel {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Length of one extended score vector, `W·dim(θ_j)`.
    pub fn score_dim(&self) -> usize {
        self.corr.basis_count() * self.dim()
    }
}

/// Extended scores of one block at one parameter value.
#[derive(Clone, Debug)]
pub struct ScoreEval {
    /// `ḡ_{j,N}`.
    pub gbar: Vector,
    /// Per-subject `g_ij`, one row per subject (`N × W·dim θ_j`).
    pub scores: Mat,
    /// `∇ḡ`, residual-only derivative (`W·dim θ_j × dim θ_j`).
    pub jacobian: Mat,
}

impl ScoreEval {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    /// `C_{j,N} = N⁻¹ Σ g gᵀ`.
    pub fn weight_matrix(&self) -> Mat {
        c_from_scores(&self.scores)
    }
}

pub fn c_from_scores(scores: &Mat) -> Mat {
    let n = scores.nrows() as f64;
    (scores.transpose() * scores) / n
}

/// Factor `C + ridge·I` with the relative ridge `DEFAULT_C_RIDGE`.
pub fn factor_c(c: &Mat) -> Result<SpdFactor> {
    SpdFactor::with_relative_ridge(c, DEFAULT_C_RIDGE).map_err(|e| {
        ScmError::Numeric(format!(
            "{e}; the extended-score covariance is singular, try a larger ridge or a coarser partition"
        ))
    })
}

fn subject_terms(
    theta: &Vector,
    sb: &crate::partition::SubjectBlock,
    qm: &QifModel,
    with_jacobian: bool,
    score: &mut [f64],
    jac: &mut Mat,
) -> Result<()> {
    let k = qm.dim();
    let (mu, dmu) = mean_and_jacobian(theta, &sb.x, &sb.z, &sb.times, &qm.model)
        .map_err(|e| e.context(format!("subject index {}", sb.subject)))?;
    let m = mu.len();
    let mut inv_sqrt_a = vec![0.0; m];
    for t in 0..m {
        let a = match qm.model.link {
            LinkFunction::Identity => qm.dispersion,
            LinkFunction::Log => mu[t],
        };
        if !(a > 0.0) || !a.is_finite() {
            return Err(ScmError::Numeric(format!(
                "zero or invalid marginal variance {a} for subject index {} at time {}",
                sb.subject, sb.times[t]
            )));
        }
        inv_sqrt_a[t] = 1.0 / a.sqrt();
    }
    let resid: Vec<f64> = (0..m).map(|t| (sb.y[t] - mu[t]) * inv_sqrt_a[t]).collect();
    let mut jt = dmu;
    for t in 0..m {
        for c in 0..k {
            jt[(t, c)] *= inv_sqrt_a[t];
        }
    }
    let mut rv = vec![0.0; m];
    let mut col = vec![0.0; m];
    let mut rcol = vec![0.0; m];
    for w in 0..qm.corr.basis_count() {
        qm.corr.apply(w, &resid, &mut rv);
        for c in 0..k {
            score[w * k + c] = (0..m).map(|t| jt[(t, c)] * rv[t]).sum();
        }
        if with_jacobian {
            for c2 in 0..k {
                for t in 0..m {
                    col[t] = jt[(t, c2)];
                }
                qm.corr.apply(w, &col, &mut rcol);
                for c in 0..k {
                    let v: f64 = (0..m).map(|t| jt[(t, c)] * rcol[t]).sum();
                    jac[(w * k + c, c2)] -= v;
                }
            }
        }
    }
    Ok(())
}

fn evaluate(theta: &Vector, block: &BlockData, qm: &QifModel, with_jacobian: bool) -> Result<ScoreEval> {
    let k = qm.dim();
    if theta.len() != k {
        return Err(ScmError::Config(format!(
            "block {} parameter has length {}, expected {k}",
            block.block + 1,
            theta.len()
        )));
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(ScmError::Numeric(format!("block {} parameter is not finite", block.block + 1)));
    }
    let n = block.n_subjects();
    if n == 0 {
        return Err(ScmError::Data(format!("block {} has no subjects", block.block + 1)));
    }
    let wk = qm.score_dim();
    let mut scores = Mat::zeros(n, wk);
    let mut jac = Mat::zeros(wk, k);
    let mut g = vec![0.0; wk];
    for (i, sb) in block.subjects.iter().enumerate() {
        subject_terms(theta, sb, qm, with_jacobian, &mut g, &mut jac)?;
        for (c, v) in g.iter().enumerate() {
            scores[(i, c)] = *v;
        }
    }
    let nf = n as f64;
    let gbar = Vector::from_iterator(wk, (0..wk).map(|c| scores.column(c).sum() / nf));
    Ok(ScoreEval { gbar, scores, jacobian: jac / nf })
}

/// Extended score `ḡ`, per-subject scores and `∇ḡ` at `theta`.
pub fn extended_score(theta: &Vector, block: &BlockData, qm: &QifModel) -> Result<ScoreEval> {
    evaluate(theta, block, qm, true)
}

/// QIF value, gradient (with `C` treated as fixed) and `C` at `theta`.
#[derive(Clone, Debug)]
pub struct QifObjective {
    pub value: f64,
    pub gradient: Vector,
    pub c: Mat,
}

pub fn qif_objective(theta: &Vector, block: &BlockData, qm: &QifModel) -> Result<QifObjective> {
    let ev = extended_score(theta, block, qm)?;
    let c = ev.weight_matrix();
    let f = factor_c(&c)?;
    let n = ev.n() as f64;
    let cg = f.solve_vec(&ev.gbar);
    Ok(QifObjective {
        value: n * ev.gbar.dot(&cg),
        gradient: ev.jacobian.transpose() * cg * (2.0 * n),
        c,
    })
}

/// `N·ḡ(θ)ᵀ (C₀ + ridge)⁻¹ ḡ(θ)` for a fixed factor of `C₀`.
pub fn qif_value_with_fixed_c(theta: &Vector, block: &BlockData, qm: &QifModel, c: &SpdFactor) -> Result<f64> {
    let ev = evaluate(theta, block, qm, false)?;
    Ok(ev.n() as f64 * ev.gbar.dot(&c.solve_vec(&ev.gbar)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, max_iter: 50 }
    }
}

/// Summary statistics of a fitted block: the payload shipped to the combiner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockFit {
    pub block: usize,
    pub qif: QifModel,
    /// Dense indices of the subjects contributing to this block, in row order.
    pub subjects: Vec<usize>,
    pub theta: Vector,
    /// Per-subject extended scores at `theta` (`N × W·dim θ_j`).
    pub scores: Mat,
    /// `∇ḡ` at `theta`.
    pub jacobian: Mat,
    /// `C_{j,N}` at `theta` (no ridge).
    pub c: Mat,
    /// `N·Q_{j,N}(θ̂_j)`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BlockFit {
    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| ScmError::Data(format!("cannot serialize block fit: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| ScmError::Data(format!("cannot parse block fit: {e}")))
    }
}

/// Independence-model fit used as the default starting value and to set `φ`.
///
/// Identity link: ordinary least squares. Log link: Poisson scoring started
/// from least squares on `log(y + 0.5)`.
pub fn independence_fit(block: &BlockData, model: &BlockModel) -> Result<(Vector, f64)> {
    let k = model.dim();
    let zero = Vector::zeros(k);
    let ls = |resp: &dyn Fn(f64) -> f64| -> Result<Vector> {
        let mut xtx = Mat::zeros(k, k);
        let mut xty = Vector::zeros(k);
        let lin = BlockModel { link: LinkFunction::Identity, ..model.clone() };
        for sb in &block.subjects {
            let (_, d) = mean_and_jacobian(&zero, &sb.x, &sb.z, &sb.times, &lin)?;
            xtx += d.transpose() * &d;
            let y = sb.y.map(resp);
            xty += d.transpose() * y;
        }
        let f = SpdFactor::escalating(&xtx, 1e-12, 1e-6)
            .map_err(|e| e.context(format!("block {} design is rank deficient", block.block + 1)))?;
        Ok(f.solve_vec(&xty))
    };
    match model.link {
        LinkFunction::Identity => {
            let theta = ls(&|y| y)?;
            let mut rss = 0.0;
            let mut nobs = 0usize;
            for sb in &block.subjects {
                let (mu, _) = mean_and_jacobian(&theta, &sb.x, &sb.z, &sb.times, model)?;
                rss += (&sb.y - mu).norm_squared();
                nobs += sb.times.len();
            }
            let dof = nobs.saturating_sub(k).max(1) as f64;
            let phi = rss / dof;
            Ok((theta, if phi > 0.0 && phi.is_finite() { phi } else { 1.0 }))
        }
        LinkFunction::Log => {
            let mut theta = ls(&|y| (y.max(0.0) + 0.5).ln())?;
            let loglik = |th: &Vector| -> Option<f64> {
                let mut ll = 0.0;
                for sb in &block.subjects {
                    let (mu, _) = mean_and_jacobian(th, &sb.x, &sb.z, &sb.times, model).ok()?;
                    ll += sb.y.iter().zip(mu.iter()).map(|(y, m)| y * m.ln() - m).sum::<f64>();
                }
                Some(ll)
            };
            let mut current = loglik(&theta)
                .ok_or_else(|| ScmError::Numeric(format!("block {}: poor starting value", block.block + 1)))?;
            for _ in 0..100 {
                let mut info = Mat::zeros(k, k);
                let mut score = Vector::zeros(k);
                for sb in &block.subjects {
                    let (mu, d) = mean_and_jacobian(&theta, &sb.x, &sb.z, &sb.times, model)?;
                    // d = diag(μ)·X, so Xᵀ(y−μ) = dᵀ diag(1/μ)(y−μ)
                    for t in 0..mu.len() {
                        let r = (sb.y[t] - mu[t]) / mu[t];
                        for a in 0..k {
                            score[a] += d[(t, a)] * r;
                            for b in 0..k {
                                info[(a, b)] += d[(t, a)] * d[(t, b)] / mu[t];
                            }
                        }
                    }
                }
                let f = SpdFactor::escalating(&info, 1e-12, 1e-6)?;
                let step = f.solve_vec(&score);
                let mut scale = 1.0;
                let mut accepted = false;
                for _ in 0..40 {
                    let trial = &theta + &step * scale;
                    if let Some(ll) = loglik(&trial) {
                        if ll >= current {
                            theta = trial;
                            current = ll;
                            accepted = true;
                            break;
                        }
                    }
                    scale *= 0.5;
                }
                if !accepted || step.amax() * scale < 1e-10 {
                    break;
                }
            }
            Ok((theta, 1.0))
        }
    }
}

/// Gauss–Newton minimization of the block QIF.
///
/// Each iteration solves `[∇ḡᵀC⁻¹∇ḡ] Δ = −∇ḡᵀC⁻¹ḡ` with `C` at the current
/// iterate and halves the step until the QIF with that `C` held fixed does not
/// increase. When no halving decreases it (possible under the log link, where
/// `∇ḡ` omits the derivative of `A`), the full step is taken if it shrinks the
/// estimating function `∇ḡᵀC⁻¹ḡ`.
pub fn fit_block(
    block: &BlockData,
    model: &BlockModel,
    corr: WorkingCorrelation,
    init: Option<Vector>,
    settings: SolverSettings,
) -> Result<BlockFit> {
    let k = model.dim();
    let n = block.n_subjects();
    if n < k {
        return Err(ScmError::Data(format!(
            "block {} has {n} subjects but {k} parameters",
            block.block + 1
        )));
    }
    let (start, dispersion) = independence_fit(block, model)?;
    let qm = QifModel { model: model.clone(), corr, dispersion };
    let mut theta = init.unwrap_or(start);
    let nf = n as f64;
    let mut iterations = 0;
    let mut converged = false;
    let estimating_norm = |th: &Vector| -> Option<f64> {
        let ev = extended_score(th, block, &qm).ok()?;
        let f = factor_c(&ev.weight_matrix()).ok()?;
        Some((ev.jacobian.transpose() * f.solve_vec(&ev.gbar)).norm())
    };
    while iterations < settings.max_iter {
        let ev = extended_score(&theta, block, &qm).map_err(|e| e.context(format!("block {}", block.block + 1)))?;
        let cf = factor_c(&ev.weight_matrix()).map_err(|e| e.context(format!("block {}", block.block + 1)))?;
        let cg = cf.solve_vec(&ev.gbar);
        let u = ev.jacobian.transpose() * &cg;
        if (&u * (2.0 * nf)).amax() < settings.tol {
            converged = true;
            break;
        }
        let gamma = ev.jacobian.transpose() * cf.solve(&ev.jacobian);
        let gf = SpdFactor::escalating(&gamma, 1e-12, 1e-6)
            .map_err(|e| e.context(format!("block {} information matrix", block.block + 1)))?;
        let delta = -gf.solve_vec(&u);
        let f0 = nf * ev.gbar.dot(&cg);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &theta + &delta * scale;
            if let Ok(ft) = qif_value_with_fixed_c(&trial, block, &qm, &cf) {
                if ft <= f0 {
                    accepted = Some(trial);
                    break;
                }
            }
            scale *= 0.5;
        }
        if accepted.is_none() {
            let trial = &theta + &delta;
            if let Some(nt) = estimating_norm(&trial) {
                if nt < u.norm() {
                    scale = 1.0;
                    accepted = Some(trial);
                }
            }
        }
        iterations += 1;
        match accepted {
            Some(next) => {
                theta = next;
                if (&delta * scale).amax() < settings.tol {
                    converged = true;
                    break;
                }
            }
            None => {
                log::warn!("block {}: line search failed at iteration {iterations}", block.block + 1);
                break;
            }
        }
    }
    if !converged {
        log::warn!(
            "block {}: QIF did not converge within {} iterations",
            block.block + 1,
            settings.max_iter
        );
    }
    let ev = extended_score(&theta, block, &qm).map_err(|e| e.context(format!("block {}", block.block + 1)))?;
    let c = ev.weight_matrix();
    let cf = factor_c(&c)?;
    let objective = nf * ev.gbar.dot(&cf.solve_vec(&ev.gbar));
    Ok(BlockFit {
        block: block.block,
        qif: qm,
        subjects: block.subject_ids(),
        theta,
        scores: ev.scores,
        jacobian: ev.jacobian,
        c,
        objective,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BasisSpec;
    use crate::partition::{split, LongData, Partition, Record};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn linear_block(n: usize, m: usize, seed: u64, p: usize) -> (BlockData, BlockModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for i in 0..n {
            let shared: f64 = rng.sample(StandardNormal);
            for k in 0..m {
                let t = k as f64 / (m - 1) as f64;
                let x: f64 = rng.sample(StandardNormal);
                let z: Vec<f64> = (0..p).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
                let eps: f64 = rng.sample(StandardNormal);
                let mean = x * (1.0 + 2.0 * t - t * t) + z.iter().sum::<f64>() * 0.7;
                records.push(Record { id: i as i64, time: t, y: mean + 0.8 * shared + 0.6 * eps, x: vec![x], z });
            }
        }
        let data = LongData::from_records(1, p, records).unwrap();
        let blocks = split(&data, &Partition::new(vec![0.0, 1.0]).unwrap()).unwrap();
        let model = BlockModel {
            block: 0,
            edges: (0.0, 1.0),
            basis: BasisSpec::new(vec![2], true).unwrap(),
            link: LinkFunction::Identity,
            p,
        };
        (blocks.into_iter().next().unwrap(), model)
    }

    #[test]
    fn basis_matrices_are_zero_one() {
        let r = WorkingCorrelation::Ar1.basis_matrix(1, 3);
        assert_eq!(r, Mat::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]));
        let e = WorkingCorrelation::Exchangeable.basis_matrix(1, 3);
        assert_eq!(e, Mat::from_row_slice(3, 3, &[0., 1., 1., 1., 0., 1., 1., 1., 0.]));
        assert_eq!(WorkingCorrelation::Exchangeable.basis_matrix(0, 4), Mat::identity(4, 4));
        for corr in [WorkingCorrelation::Ar1, WorkingCorrelation::Exchangeable] {
            let v = [0.3, -1.0, 2.0, 0.5];
            let mut out = [0.0; 4];
            corr.apply(1, &v, &mut out);
            let dense = corr.basis_matrix(1, 4) * Vector::from_row_slice(&v);
            assert_eq!(dense.as_slice(), &out);
        }
    }

    #[test]
    fn independence_identity_score_is_least_squares_score() {
        let (block, model) = linear_block(20, 6, 3, 1);
        let qm = QifModel { model: model.clone(), corr: WorkingCorrelation::Independence, dispersion: 1.0 };
        let theta = Vector::from_vec(vec![0.1, -0.2, 0.3, 0.4]);
        let ev = extended_score(&theta, &block, &qm).unwrap();
        let mut direct = Vector::zeros(4);
        for sb in &block.subjects {
            let (mu, d) = mean_and_jacobian(&theta, &sb.x, &sb.z, &sb.times, &model).unwrap();
            direct += d.transpose() * (&sb.y - mu);
        }
        direct /= block.n_subjects() as f64;
        assert!((ev.gbar - direct).amax() < 1e-12);
    }

    #[test]
    fn weight_matrix_is_mean_outer_product() {
        let (block, model) = linear_block(15, 5, 4, 1);
        let qm = QifModel { model, corr: WorkingCorrelation::Ar1, dispersion: 2.0 };
        let ev = extended_score(&Vector::from_element(4, 0.2), &block, &qm).unwrap();
        let mut brute = Mat::zeros(8, 8);
        for i in 0..ev.n() {
            let g = ev.scores.row(i).transpose();
            brute += &g * g.transpose();
        }
        brute /= ev.n() as f64;
        assert!((ev.weight_matrix() - brute).amax() < 1e-12);
        assert!(crate::linalg::min_eigenvalue(&ev.weight_matrix()) > -1e-12);
    }

    #[test]
    fn objective_zero_at_zero_score_and_nonnegative() {
        let (block, model) = linear_block(30, 6, 5, 0);
        let qm = QifModel { model, corr: WorkingCorrelation::Exchangeable, dispersion: 1.0 };
        for s in 0..5 {
            let theta = Vector::from_element(3, s as f64 * 0.3 - 0.6);
            assert!(qif_objective(&theta, &block, &qm).unwrap().value >= 0.0);
        }
        // independence + identity: ḡ vanishes at least squares
        let (ls, _) = independence_fit(&block, &qm.model).unwrap();
        let qi = QifModel { corr: WorkingCorrelation::Independence, ..qm.clone() };
        assert!(qif_objective(&ls, &block, &qi).unwrap().value < 1e-18);
    }

    #[test]
    fn gradient_matches_central_differences_with_fixed_c() {
        let (block, model) = linear_block(40, 7, 6, 1);
        let qm = QifModel { model, corr: WorkingCorrelation::Ar1, dispersion: 1.5 };
        let theta = Vector::from_vec(vec![0.9, 1.7, -0.8, 0.5]);
        let obj = qif_objective(&theta, &block, &qm).unwrap();
        let cf = factor_c(&obj.c).unwrap();
        let h = 1e-5;
        for c in 0..4 {
            let mut up = theta.clone();
            up[c] += h;
            let mut dn = theta.clone();
            dn[c] -= h;
            let fd = (qif_value_with_fixed_c(&up, &block, &qm, &cf).unwrap()
                - qif_value_with_fixed_c(&dn, &block, &qm, &cf).unwrap())
                / (2.0 * h);
            let rel = (fd - obj.gradient[c]).abs() / obj.gradient[c].abs().max(1e-8);
            assert!(rel < 1e-5, "component {c}: fd {fd} vs {}", obj.gradient[c]);
        }
    }

    #[test]
    fn fit_converges_quickly_from_truth_and_is_deterministic() {
        let (block, model) = linear_block(200, 8, 7, 1);
        let truth = Vector::from_vec(vec![1.0, 2.0, -1.0, 0.7]);
        let a = fit_block(&block, &model, WorkingCorrelation::Exchangeable, Some(truth), SolverSettings::default()).unwrap();
        assert!(a.converged);
        assert!(a.iterations <= 3 + 3, "iterations {}", a.iterations);
        let b = fit_block(&block, &model, WorkingCorrelation::Exchangeable, None, SolverSettings::default()).unwrap();
        let c = fit_block(&block, &model, WorkingCorrelation::Exchangeable, None, SolverSettings::default()).unwrap();
        assert_eq!(b.theta, c.theta);
        assert!((a.theta - &b.theta).amax() < 1e-6);
    }

    #[test]
    fn block_fit_json_round_trip() {
        let (block, model) = linear_block(25, 5, 8, 1);
        let fit = fit_block(&block, &model, WorkingCorrelation::Ar1, None, SolverSettings::default()).unwrap();
        let back = BlockFit::from_json(&fit.to_json().unwrap()).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn too_few_subjects_is_data_error() {
        let (block, model) = linear_block(3, 5, 9, 2);
        let r = fit_block(&block, &model, WorkingCorrelation::Ar1, None, SolverSettings::default());
        assert!(matches!(r, Err(ScmError::Data(_))));
    }
}
