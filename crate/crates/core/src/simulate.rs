//! Data generators for the three simulation designs and the Monte Carlo harness.

use std::f64::consts::PI;
use std::fmt::Write as _;
use web_time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal, Poisson};

use crate::combine::Schema;
use crate::constraint::{ConstraintMap, Smoothness};
use crate::error::{Result, ScmError};
use crate::linalg::{Mat, Vector};
use crate::model::{basis_row, BasisSpec, LinkFunction};
use crate::partition::{LongData, Partition, SubjectSeries};
use crate::pipeline::{fit, with_workers, CurveGrid, FitOutput, PipelineConfig, DEFAULT_LAMBDA_GRID};
use crate::qif::{SolverSettings, WorkingCorrelation};

/// Right end of the Poisson design's time domain, `1438π/999`.
pub const POISSON_T_MAX: f64 = 1438.0 * PI / 999.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    BrokenStick,
    KnownCubic,
    PoissonCopula,
}

impl ScenarioKind {
    pub const NAMES: [&'static str; 3] = ["broken-stick", "known-cubic", "poisson-copula"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "broken-stick" => Ok(ScenarioKind::BrokenStick),
            "known-cubic" => Ok(ScenarioKind::KnownCubic),
            "poisson-copula" => Ok(ScenarioKind::PoissonCopula),
            _ => Err(ScmError::Config(format!(
                "unknown scenario `{name}`; choose one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BrokenStick => Self::NAMES[0],
            ScenarioKind::KnownCubic => Self::NAMES[1],
            ScenarioKind::PoissonCopula => Self::NAMES[2],
        }
    }
}

/// Within-subject correlation of the generated errors (or latent Gaussians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "rho")]
pub enum ErrorCorrelation {
    Exchangeable(f64),
    Ar1(f64),
}

impl ErrorCorrelation {
    pub fn rho(self) -> f64 {
        match self {
            ErrorCorrelation::Exchangeable(r) | ErrorCorrelation::Ar1(r) => r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    /// Subjects `N`.
    pub n: usize,
    /// Time points per subject `M`.
    pub m: usize,
    pub correlation: ErrorCorrelation,
    pub sigma2: f64,
    pub seed: u64,
    /// Blocks used by the default fitting configuration (Poisson design only).
    pub blocks: usize,
}

impl Scenario {
    pub fn broken_stick(seed: u64) -> Self {
        Scenario {
            kind: ScenarioKind::BrokenStick,
            n: 1000,
            m: 31,
            correlation: ErrorCorrelation::Exchangeable(0.7),
            sigma2: 10.0,
            seed,
            blocks: 2,
        }
    }

    pub fn known_cubic(seed: u64) -> Self {
        Scenario {
            kind: ScenarioKind::KnownCubic,
            n: 500,
            m: 100,
            correlation: ErrorCorrelation::Ar1(0.8),
            sigma2: 100.0,
            seed,
            blocks: 5,
        }
    }

    /// Desk-scale Poisson design: `N = 300`, `M = 144`, `J = 5`.
    pub fn poisson_copula(seed: u64) -> Self {
        Scenario {
            kind: ScenarioKind::PoissonCopula,
            n: 300,
            m: 144,
            correlation: ErrorCorrelation::Ar1(0.8),
            sigma2: 1.0,
            seed,
            blocks: 5,
        }
    }

    /// Full-size Poisson design: `N = 3000`, `M = 1440`, `J = 15`.
    pub fn poisson_copula_full(seed: u64) -> Self {
        Scenario { n: 3000, m: 1440, blocks: 15, ..Self::poisson_copula(seed) }
    }

    pub fn preset(kind: ScenarioKind, seed: u64, full_scale: bool) -> Self {
        match kind {
            ScenarioKind::BrokenStick => Self::broken_stick(seed),
            ScenarioKind::KnownCubic => Self::known_cubic(seed),
            ScenarioKind::PoissonCopula if full_scale => Self::poisson_copula_full(seed),
            ScenarioKind::PoissonCopula => Self::poisson_copula(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m < 2 {
            return Err(ScmError::Config("a scenario needs at least one subject and two time points".into()));
        }
        let rho = self.correlation.rho();
        if !(0.0..1.0).contains(&rho) {
            return Err(ScmError::Config(format!("correlation must lie in [0, 1), got {rho}")));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(ScmError::Config(format!("variance must be non-negative, got {}", self.sigma2)));
        }
        match self.kind {
            ScenarioKind::BrokenStick if self.m != 31 => {
                Err(ScmError::Config("the broken-stick design observes t = -15..15 (M = 31)".into()))
            }
            ScenarioKind::KnownCubic if self.m != 100 => {
                Err(ScmError::Config("the known-cubic design observes t = 0..99 (M = 100)".into()))
            }
            ScenarioKind::PoissonCopula if self.blocks == 0 => Err(ScmError::Config("block count must be positive".into())),
            _ => Ok(()),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        match self.kind {
            ScenarioKind::BrokenStick => (-15..=15).map(f64::from).collect(),
            ScenarioKind::KnownCubic => (0..100).map(f64::from).collect(),
            ScenarioKind::PoissonCopula => {
                let step = POISSON_T_MAX / (self.m - 1) as f64;
                (0..self.m).map(|k| if k + 1 == self.m { POISSON_T_MAX } else { step * k as f64 }).collect()
            }
        }
    }

    /// True `β₁(t)`.
    pub fn beta(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::BrokenStick => t.abs(),
            ScenarioKind::KnownCubic => known_cubic_beta(t),
            ScenarioKind::PoissonCopula => 0.156 * (t * (t - PI) * (t - POISSON_T_MAX) + 1.84),
        }
    }

    pub fn eta(&self) -> Option<f64> {
        match self.kind {
            ScenarioKind::BrokenStick => None,
            ScenarioKind::KnownCubic => Some(6.0),
            ScenarioKind::PoissonCopula => Some(0.5),
        }
    }

    pub fn p(&self) -> usize {
        self.eta().map_or(0, |_| 1)
    }

    /// The fitting configuration that goes with this design.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let (partition, degree, smoothness, link, correlation, grid) = match self.kind {
            ScenarioKind::BrokenStick => (
                Partition::new(vec![-15.0, 0.0, 15.0])?,
                1,
                Smoothness::C0,
                LinkFunction::Identity,
                WorkingCorrelation::Exchangeable,
                vec![0.0],
            ),
            ScenarioKind::KnownCubic => (
                Partition::new(vec![0.0, 20.0, 40.0, 60.0, 80.0, 99.0])?,
                3,
                Smoothness::C1,
                LinkFunction::Identity,
                WorkingCorrelation::Ar1,
                DEFAULT_LAMBDA_GRID.to_vec(),
            ),
            ScenarioKind::PoissonCopula => (
                Partition::uniform(0.0, POISSON_T_MAX, self.blocks)?,
                3,
                Smoothness::C1,
                LinkFunction::Log,
                WorkingCorrelation::Ar1,
                DEFAULT_LAMBDA_GRID.to_vec(),
            ),
        };
        Ok(PipelineConfig {
            partition,
            basis: BasisSpec::new(vec![degree], true)?,
            link,
            correlation,
            smoothness,
            lambda_grid: grid,
            alpha: 0.05,
            schema: Schema::LambdaParallel,
            solver: SolverSettings::default(),
            curve_grid: CurveGrid::Observed,
        })
    }

    pub fn generate(&self, rep: u64) -> Result<LongData> {
        match self.kind {
            ScenarioKind::PoissonCopula => gen_poisson_copula(self, rep),
            _ => gen_gaussian(self, rep),
        }
    }
}

fn known_cubic_beta(t: f64) -> f64 {
    let s = t / 20.0;
    let plus = |c: f64| ((t - c) / 20.0).max(0.0);
    let (a, b, c, d) = (plus(20.0), plus(40.0), plus(60.0), plus(80.0));
    1.0 + 2.0 * s - 3.0 * s * s + 4.0 * s.powi(3) + 5.0 * a * a - 2.0 * a.powi(3) - 3.0 * b * b - 10.0 * b.powi(3)
        + 15.0 * c * c
        + 20.0 * c.powi(3)
        - 10.0 * d * d
        + 5.0 * d.powi(3)
}

/// Independent stream for replicate `rep` of a scenario seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One subject's correlated standard-normal errors.
fn correlated_errors(rng: &mut ChaCha8Rng, m: usize, corr: ErrorCorrelation) -> Vec<f64> {
    match corr {
        ErrorCorrelation::Exchangeable(rho) => {
            let shared: f64 = rng.sample(StandardNormal);
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            (0..m).map(|_| a * shared + b * rng.sample::<f64, _>(StandardNormal)).collect()
        }
        ErrorCorrelation::Ar1(rho) => {
            let innov = (1.0 - rho * rho).sqrt();
            let mut prev: f64 = rng.sample(StandardNormal);
            let mut out = Vec::with_capacity(m);
            out.push(prev);
            for _ in 1..m {
                prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
                out.push(prev);
            }
            out
        }
    }
}

/// Gaussian outcomes for the broken-stick and known-cubic designs.
pub fn gen_gaussian(sc: &Scenario, rep: u64) -> Result<LongData> {
    sc.validate()?;
    if sc.kind == ScenarioKind::PoissonCopula {
        return Err(ScmError::Config("the Poisson design uses gen_poisson_copula".into()));
    }
    let mut rng = replicate_rng(sc.seed, rep);
    let times = sc.times();
    let beta: Vec<f64> = times.iter().map(|&t| sc.beta(t)).collect();
    let sigma = sc.sigma2.sqrt();
    let p = sc.p();
    let subjects = (0..sc.n)
        .map(|i| {
            let (x, z): (Vec<f64>, Vec<f64>) = match sc.kind {
                ScenarioKind::KnownCubic => (0..sc.m)
                    .map(|_| {
                        let x: f64 = rng.sample(StandardNormal);
                        let z = if rng.random::<bool>() { 1.0 } else { 0.0 };
                        (x, z)
                    })
                    .unzip(),
                _ => (vec![1.0; sc.m], Vec::new()),
            };
            let eps = correlated_errors(&mut rng, sc.m, sc.correlation);
            let eta = sc.eta().unwrap_or(0.0);
            let y = (0..sc.m)
                .map(|k| x[k] * beta[k] + if p > 0 { z[k] * eta } else { 0.0 } + sigma * eps[k])
                .collect();
            SubjectSeries { id: i as i64 + 1, times: times.clone(), y, x, z }
        })
        .collect();
    Ok(LongData { q: 1, p, subjects })
}

/// Counts through a Gaussian copula: latent AR(1) normals mapped by `Φ` and
/// then by the Poisson quantile function at mean `exp{Xβ₁(t) + Zη}`.
pub fn gen_poisson_copula(sc: &Scenario, rep: u64) -> Result<LongData> {
    sc.validate()?;
    if sc.kind != ScenarioKind::PoissonCopula {
        return Err(ScmError::Config("gen_poisson_copula needs the Poisson design".into()));
    }
    let mut rng = replicate_rng(sc.seed, rep);
    let times = sc.times();
    let beta: Vec<f64> = times.iter().map(|&t| sc.beta(t)).collect();
    let eta = sc.eta().unwrap_or(0.0);
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let mut subjects = Vec::with_capacity(sc.n);
    for i in 0..sc.n {
        let x: Vec<f64> = (0..sc.m).map(|_| rng.random_range(0.5..5.0)).collect();
        let z: Vec<f64> = (0..sc.m).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let latent = correlated_errors(&mut rng, sc.m, sc.correlation);
        let mut y = Vec::with_capacity(sc.m);
        for k in 0..sc.m {
            let mean = (x[k] * beta[k] + z[k] * eta).exp();
            y.push(poisson_quantile(phi.cdf(latent[k]), mean)? as f64);
        }
        subjects.push(SubjectSeries { id: i as i64 + 1, times: times.clone(), y, x, z });
    }
    Ok(LongData { q: 1, p: 1, subjects })
}

/// Smallest `k` with `P(Y ≤ k) ≥ u` for `Y ~ Poisson(mean)`.
pub fn poisson_quantile(u: f64, mean: f64) -> Result<u64> {
    if !(mean.is_finite() && mean > 0.0 && mean < 1e12) {
        return Err(ScmError::Config(format!("Poisson mean {mean} is out of range; reduce the covariate scale")));
    }
    let dist = Poisson::new(mean).map_err(|e| ScmError::Config(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.inverse_cdf(u.clamp(0.0, 1.0 - f64::EPSILON)))
}

/// `θ*₀`: block-wise least-squares projection of the true curve onto each
/// block polynomial, pulled back through the reduction map.
pub fn true_theta_star(sc: &Scenario, cfg: &PipelineConfig, cmap: &ConstraintMap) -> Result<Vector> {
    let layout = &cmap.layout;
    let mut theta = Vector::zeros(layout.dim());
    for j in 0..layout.blocks {
        let edges = cfg.partition.block_edges(j);
        let deg = layout.degrees[0];
        let pts = 8 * (deg + 1);
        let ts: Vec<f64> = (0..pts).map(|k| edges.0 + (edges.1 - edges.0) * k as f64 / (pts - 1) as f64).collect();
        let mut x = Mat::zeros(pts, deg + 1);
        for (r, &t) in ts.iter().enumerate() {
            x.set_row(r, &Vector::from_vec(basis_row(t, edges, deg, cfg.basis.scaled)?).transpose());
        }
        let y = Vector::from_iterator(pts, ts.iter().map(|&t| sc.beta(t)));
        let coef = (x.transpose() * &x)
            .cholesky()
            .ok_or_else(|| ScmError::Numeric("projection basis is singular".into()))?
            .solve(&(x.transpose() * y));
        for d in 0..=deg {
            theta[layout.gamma_index(j, 0, d)] = coef[d];
        }
    }
    if let Some(eta) = sc.eta() {
        theta[layout.eta_index(0)] = eta;
    }
    Ok(cmap.reduce(&theta))
}

/// What one replicate contributes to the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub rep: u64,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    pub curve_times: Vec<f64>,
    pub curve_covered: Vec<bool>,
    pub lambda: f64,
    /// Whole-pipeline seconds under each timed schema.
    pub seconds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub ase: f64,
    /// Absent with fewer than two successful replicates.
    pub ese: Option<f64>,
    pub rase: f64,
    pub cp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCoverage {
    pub times: Vec<f64>,
    pub cp: Vec<f64>,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaTiming {
    pub schema: u8,
    pub mean: f64,
    pub sd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: Scenario,
    pub reps: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub parameters: Vec<ParameterRow>,
    pub curve: CurveCoverage,
    pub timing: Vec<SchemaTiming>,
    pub mean_lambda: f64,
}

impl McReport {
    /// Mean CP over the `gamma` rows.
    pub fn gamma_cp(&self) -> f64 {
        let rows: Vec<f64> = self.parameters.iter().filter(|r| r.name.starts_with("gamma")).map(|r| r.cp).collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    }

    pub fn row(&self, name: &str) -> Option<&ParameterRow> {
        self.parameters.iter().find(|r| r.name == name)
    }

    /// Table with columns Bias×10⁻², ASE×10⁻², ESE×10⁻², RASE×10⁻³, CP.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {} (N = {}, M = {}), {} of {} replicates succeeded",
            self.scenario.kind.name(),
            self.scenario.n,
            self.scenario.m,
            self.succeeded,
            self.reps
        );
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>12} {:>12} {:>13} {:>6}",
            "Parameter", "Bias x1e-2", "ASE x1e-2", "ESE x1e-2", "RASE x1e-3", "CP"
        );
        for r in &self.parameters {
            let ese = r.ese.map_or("-".to_string(), |e| format!("{:.2}", e * 1e2));
            let _ = writeln!(
                s,
                "{:<14} {:>12.2} {:>12.2} {:>12} {:>13.2} {:>6.2}",
                r.name,
                r.bias * 1e2,
                r.ase * 1e2,
                ese,
                r.rase * 1e3,
                r.cp
            );
        }
        let _ = writeln!(s, "average pointwise CP of beta_1(t): {:.3}", self.curve.average);
        let _ = writeln!(s, "mean selected lambda: {:.3e}", self.mean_lambda);
        for t in &self.timing {
            let sd = t.sd.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(s, "schema ({}) seconds: mean {:.3}, sd {}", t.schema, t.mean, sd);
        }
        s
    }
}

/// Worker budget for a Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McWorkers {
    /// Replicates in flight at once.
    pub replicates: usize,
    /// Dedicated workers inside each replicate's pipeline.
    pub per_replicate: usize,
}

impl Default for McWorkers {
    fn default() -> Self {
        McWorkers { replicates: 1, per_replicate: 1 }
    }
}

/// Simulate, fit and score one replicate.
pub fn run_replicate(
    sc: &Scenario,
    cfg: &PipelineConfig,
    truth: &Vector,
    rep: u64,
    schemas: &[Schema],
    per_replicate: usize,
) -> Result<ReplicateOutcome> {
    let data = sc.generate(rep)?;
    let mut seconds = Vec::with_capacity(schemas.len());
    let mut first: Option<FitOutput> = None;
    for &schema in schemas {
        let c = PipelineConfig { schema, ..cfg.clone() };
        let t0 = Instant::now();
        let out = with_workers(Some(per_replicate), || fit(&data, &c))?;
        seconds.push(t0.elapsed().as_secs_f64());
        first.get_or_insert(out);
    }
    let out = first.ok_or_else(|| ScmError::Config("no schema to time".into()))?;
    let z = crate::combine::normal_quantile(cfg.alpha)?;
    let se = out.theta_star_se();
    let estimate: Vec<f64> = out.theta_star.iter().copied().collect();
    let covered = estimate.iter().zip(&se).zip(truth.iter()).map(|((e, s), t)| (e - t).abs() <= z * s).collect();
    let (curve_times, curve_covered) = out
        .curves
        .iter()
        .map(|c| (c.t, c.lower <= sc.beta(c.t) && sc.beta(c.t) <= c.upper))
        .unzip();
    Ok(ReplicateOutcome { rep, estimate, se, covered, curve_times, curve_covered, lambda: out.lambda, seconds })
}

fn mean_sd(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

/// Summarize replicate outcomes; the result does not depend on their order.
pub fn aggregate(
    sc: &Scenario,
    names: &[String],
    truth: &Vector,
    schemas: &[Schema],
    reps: usize,
    outcomes: &[ReplicateOutcome],
) -> Result<McReport> {
    let mut ok: Vec<&ReplicateOutcome> = outcomes.iter().collect();
    ok.sort_by_key(|o| o.rep);
    if ok.is_empty() {
        return Err(ScmError::Numeric("every replicate failed".into()));
    }
    let k = ok.len() as f64;
    let parameters = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let est: Vec<f64> = ok.iter().map(|o| o.estimate[i]).collect();
            let (mean_est, ese) = mean_sd(&est);
            let ase = ok.iter().map(|o| o.se[i]).sum::<f64>() / k;
            ParameterRow {
                name: name.clone(),
                truth: truth[i],
                bias: mean_est - truth[i],
                ase,
                ese,
                rase: ase / mean_est,
                cp: ok.iter().filter(|o| o.covered[i]).count() as f64 / k,
            }
        })
        .collect();
    let times = ok[0].curve_times.clone();
    let cp: Vec<f64> = (0..times.len())
        .map(|t| ok.iter().filter(|o| o.curve_covered[t]).count() as f64 / k)
        .collect();
    let average = cp.iter().sum::<f64>() / cp.len().max(1) as f64;
    let timing = schemas
        .iter()
        .enumerate()
        .map(|(s, schema)| {
            let secs: Vec<f64> = ok.iter().map(|o| o.seconds[s]).collect();
            let (mean, sd) = mean_sd(&secs);
            SchemaTiming { schema: schema.number(), mean, sd }
        })
        .collect();
    Ok(McReport {
        scenario: sc.clone(),
        reps,
        succeeded: ok.len(),
        failed: reps - ok.len(),
        parameters,
        curve: CurveCoverage { times, cp, average },
        timing,
        mean_lambda: ok.iter().map(|o| o.lambda).sum::<f64>() / k,
        })
}

/// Run `reps` replicates; fails when more than 5% of them fail.
pub fn run_mc(
    sc: &Scenario,
    cfg: &PipelineConfig,
    reps: usize,
    schemas: &[Schema],
    workers: McWorkers,
) -> Result<McReport> {
    if reps == 0 {
        return Err(ScmError::Config("at least one replicate is required".into()));
    }
    if schemas.is_empty() || workers.replicates == 0 || workers.per_replicate == 0 {
        return Err(ScmError::Config("need at least one schema and one worker".into()));
    }
    sc.validate()?;
    let cmap = cfg.validate(sc.p())?;
    let truth = true_theta_star(sc, cfg, &cmap)?;
    let names = cmap.reduced_names();
    let one = |rep: usize| -> Option<ReplicateOutcome> {
        match run_replicate(sc, cfg, &truth, rep as u64, schemas, workers.per_replicate) {
            Ok(o) => Some(o),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                None
            }
        }
    };
    let outcomes: Vec<ReplicateOutcome> = with_workers(Some(workers.replicates), || Ok(run_all(reps, one)))?;
    let failed = reps - outcomes.len();
    if failed as f64 > 0.05 * reps as f64 {
        return Err(ScmError::Numeric(format!("{failed} of {reps} replicates failed (more than 5%)")));
    }
    aggregate(sc, &names, &truth, schemas, reps, &outcomes)
}

#[cfg(feature = "parallel")]
fn run_all(reps: usize, one: impl Fn(usize) -> Option<ReplicateOutcome> + Sync + Send) -> Vec<ReplicateOutcome> {
    use rayon::prelude::*;
    (0..reps).into_par_iter().filter_map(one).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(reps: usize, one: impl Fn(usize) -> Option<ReplicateOutcome> + Sync + Send) -> Vec<ReplicateOutcome> {
    (0..reps).filter_map(one).collect()
}
