//! End-to-end fit: split, distributed block fits, combination with GCV,
//! covariance and curve bands.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::combine::{
    covariance, curve_and_bands, eta_estimates, gcv, normal_quantile, stack, BlockMoments, CurvePoint, GcvEntry,
    GcvSelection, MomentSource, ScalarEstimate, Schema,
};
use crate::constraint::{ConstraintMap, Smoothness};
use crate::error::{Result, ScmError};
use crate::linalg::{Mat, Vector};
use crate::model::{BasisSpec, BlockModel, LinkFunction};
use crate::partition::{split, BlockData, LongData, Partition};
use crate::qif::{extended_score, fit_block, BlockFit, QifModel, SolverSettings, WorkingCorrelation};

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Where bands are reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum CurveGrid {
    /// Every distinct observed time.
    #[default]
    Observed,
    /// `lo, lo + step, …` up to the domain end (inclusive).
    Step(f64),
    Points(Vec<f64>),
}

impl CurveGrid {
    pub fn resolve(&self, data: &LongData, part: &Partition) -> Result<Vec<f64>> {
        match self {
            CurveGrid::Observed => Ok(data.distinct_times()),
            CurveGrid::Step(step) => {
                if !(*step > 0.0) {
                    return Err(ScmError::Config(format!("grid step must be positive, got {step}")));
                }
                let (lo, hi) = part.domain();
                let n = ((hi - lo) / step + 1e-9).floor() as usize;
                let mut g: Vec<f64> = (0..=n).map(|k| lo + *step * k as f64).collect();
                if hi - g[n] > 1e-9 * step {
                    g.push(hi);
                }
                Ok(g)
            }
            CurveGrid::Points(p) => Ok(p.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub partition: Partition,
    pub basis: BasisSpec,
    pub link: LinkFunction,
    pub correlation: WorkingCorrelation,
    pub smoothness: Smoothness,
    pub lambda_grid: Vec<f64>,
    pub alpha: f64,
    pub schema: Schema,
    pub solver: SolverSettings,
    pub curve_grid: CurveGrid,
}

impl PipelineConfig {
    /// Validate everything that does not need the data.
    pub fn validate(&self, p: usize) -> Result<ConstraintMap> {
        if self.lambda_grid.is_empty() {
            return Err(ScmError::Config("the lambda grid is empty".into()));
        }
        if let Some(l) = self.lambda_grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(ScmError::Config(format!("lambda values must be finite and non-negative, got {l}")));
        }
        normal_quantile(self.alpha)?;
        ConstraintMap::new(&self.partition, &self.basis, self.smoothness, p)
    }

    pub fn block_model(&self, j: usize, p: usize) -> BlockModel {
        BlockModel {
            block: j,
            edges: self.partition.block_edges(j),
            basis: self.basis.clone(),
            link: self.link,
            p,
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub distributed: f64,
    pub combine: f64,
    pub gcv: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.distributed + self.combine + self.gcv
    }
}

/// Raw block data plus fitted models: re-evaluates moments at any `θ_j`.
pub struct BlockEvaluator<'a> {
    pub blocks: &'a [BlockData],
    pub models: Vec<QifModel>,
}

impl MomentSource for BlockEvaluator<'_> {
    fn blocks(&self) -> usize {
        self.blocks.len()
    }

    fn evaluate_block(&self, j: usize, theta_j: &Vector) -> Result<BlockMoments> {
        let block = &self.blocks[j];
        let ev = extended_score(theta_j, block, &self.models[j])
            .map_err(|e| e.context(format!("block {} re-evaluation", j + 1)))?;
        BlockMoments::from_scores(j, block.subject_ids(), theta_j.clone(), &ev.scores, &ev.jacobian)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: usize,
    pub edges: (f64, f64),
    pub n_subjects: usize,
    pub iterations: usize,
    pub converged: bool,
    pub qif: f64,
}

/// Everything produced by one fit.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub cmap: ConstraintMap,
    pub fits: Vec<BlockFit>,
    pub selection: GcvSelection,
    pub lambda: f64,
    pub theta_star: Vector,
    pub covariance: Mat,
    pub curves: Vec<CurvePoint>,
    pub eta: Vec<ScalarEstimate>,
    pub timings: PhaseTimings,
}

impl FitOutput {
    pub fn theta(&self) -> Vector {
        self.cmap.expand(&self.theta_star)
    }

    pub fn theta_star_se(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Fit all blocks independently.
pub fn fit_blocks(blocks: &[BlockData], cfg: &PipelineConfig, p: usize) -> Result<Vec<BlockFit>> {
    let fit = |j: usize| {
        fit_block(&blocks[j], &cfg.block_model(j, p), cfg.correlation, None, cfg.solver)
            .map_err(|e| e.context(format!("block {} fit", j + 1)))
    };
    map_blocks(blocks.len(), fit)
}

#[cfg(feature = "parallel")]
fn map_blocks<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_blocks<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// Combine converged block fits: GCV over the λ grid, covariance, bands.
pub fn combine_fits(
    data: &LongData,
    blocks: &[BlockData],
    fits: Vec<BlockFit>,
    cfg: &PipelineConfig,
    cmap: ConstraintMap,
    timings: &mut PhaseTimings,
) -> Result<FitOutput> {
    let t0 = Instant::now();
    if let Some(f) = fits.iter().find(|f| !f.converged) {
        return Err(ScmError::Numeric(format!(
            "block {} QIF did not converge in {} iterations; try a coarser partition or a lower basis degree",
            f.block + 1,
            f.iterations
        )));
    }
    let moments: Vec<BlockMoments> = fits.iter().map(BlockMoments::from_fit).collect::<Result<_>>()?;
    let base = stack(&moments, &cmap.layout)?;
    let source = BlockEvaluator { blocks, models: fits.iter().map(|f| f.qif.clone()).collect() };
    timings.combine += t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let selection = gcv(&cfg.lambda_grid, &base, &cmap, &source, cfg.schema)?;
    timings.gcv += t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let lambda = selection.best.entry.lambda;
    let theta_star = selection.best.theta_star.clone();
    let cov = covariance(&selection.best.moments, &cmap, lambda)?;
    let grid = cfg.curve_grid.resolve(data, &cfg.partition)?;
    let curves = curve_and_bands(&theta_star, &cov, &cmap, &cfg.partition, cfg.basis.scaled, &grid, cfg.alpha)?;
    let eta = eta_estimates(&theta_star, &cov, &cmap, cfg.alpha)?;
    timings.combine += t2.elapsed().as_secs_f64();
    Ok(FitOutput { cmap, fits, selection, lambda, theta_star, covariance: cov, curves, eta, timings: *timings })
}

/// Split, fit blocks, combine. Runs on the current worker pool.
pub fn fit(data: &LongData, cfg: &PipelineConfig) -> Result<FitOutput> {
    let cmap = cfg.validate(data.p)?;
    if cfg.basis.q() != data.q {
        return Err(ScmError::Config(format!(
            "basis lists {} degrees but the data have {} functional covariates",
            cfg.basis.q(),
            data.q
        )));
    }
    let mut timings = PhaseTimings::default();
    let t0 = Instant::now();
    let blocks = split(data, &cfg.partition)?;
    let fits = fit_blocks(&blocks, cfg, data.p)?;
    timings.distributed = t0.elapsed().as_secs_f64();
    let out = combine_fits(data, &blocks, fits, cfg, cmap, &mut timings)?;
    log::info!(
        "timings: distributed {:.3}s ({:.1}%), combine {:.3}s, gcv {:.3}s",
        timings.distributed,
        100.0 * timings.distributed / timings.total().max(f64::MIN_POSITIVE),
        timings.combine,
        timings.gcv
    );
    Ok(out)
}

/// Run `f` on a dedicated pool of `workers` threads (the current pool when `None`).
#[cfg(feature = "parallel")]
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(ScmError::Config("worker count must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| ScmError::Config(format!("cannot start {w} workers: {e}")))?
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == Some(0) {
        return Err(ScmError::Config("worker count must be at least 1".into()));
    }
    f()
}

/// Provenance written into every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl Metadata {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Metadata { tool: "scm".into(), version: env!("CARGO_PKG_VERSION").into(), config_hash: config_hash.into() }
    }
}

/// JSON result bundle. Contains no timings so it is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub metadata: Metadata,
    pub n_subjects: usize,
    pub n_observations: usize,
    pub smoothness: Smoothness,
    pub lambda_selected: f64,
    pub gcv_table: Vec<GcvEntry>,
    pub theta_star: Vec<f64>,
    pub theta_star_se: Vec<f64>,
    pub theta: Vec<f64>,
    pub eta: Vec<ScalarEstimate>,
    pub alpha: f64,
    pub blocks: Vec<BlockSummary>,
}

impl ResultBundle {
    pub fn new(out: &FitOutput, data: &LongData, cfg: &PipelineConfig, blocks: &[BlockData], meta: Metadata) -> Self {
        ResultBundle {
            metadata: meta,
            n_subjects: data.n_subjects(),
            n_observations: data.n_observations(),
            smoothness: cfg.smoothness,
            lambda_selected: out.lambda,
            gcv_table: out.selection.table.clone(),
            theta_star: out.theta_star.iter().copied().collect(),
            theta_star_se: out.theta_star_se(),
            theta: out.theta().iter().copied().collect(),
            eta: out.eta.clone(),
            alpha: cfg.alpha,
            blocks: out
                .fits
                .iter()
                .zip(blocks)
                .map(|(f, b)| BlockSummary {
                    block: f.block + 1,
                    edges: b.edges,
                    n_subjects: b.n_subjects(),
                    iterations: f.iterations,
                    converged: f.converged,
                    qif: f.objective,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| ScmError::Data(format!("cannot serialize result bundle: {e}")))
    }
}

/// Curve CSV `u,t,beta_hat,lower,upper` preceded by one `#` metadata line.
pub fn curves_csv(curves: &[CurvePoint], meta: &Metadata) -> String {
    let mut s = format!("# {} {} config_hash={}\n", meta.tool, meta.version, meta.config_hash);
    s.push_str("u,t,beta_hat,lower,upper\n");
    for c in curves {
        s.push_str(&format!("{},{},{},{},{}\n", c.u, c.t, c.beta_hat, c.lower, c.upper));
    }
    s
}
