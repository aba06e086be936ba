//! Run configuration: TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scm_core::combine::Schema;
use scm_core::constraint::Smoothness;
use scm_core::model::{BasisSpec, LinkFunction};
use scm_core::partition::{LongData, Partition};
use scm_core::pipeline::{CurveGrid, PipelineConfig, DEFAULT_LAMBDA_GRID};
use scm_core::qif::{SolverSettings, WorkingCorrelation};
use scm_core::{Result, ScmError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_width: Option<f64>,
    /// One degree per functional covariate, or a single degree for all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<Smoothness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<WorkingCorrelation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkFunction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_scale: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicate_workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub both_schemas: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScmError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ScmError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let top = serde_json::to_value(over).expect("config serializes");
        if let (Some(b), Some(t)) = (base.as_object_mut(), top.as_object()) {
            for (k, v) in t {
                b.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(base).map_err(|e| ScmError::Config(format!("merged config: {e}")))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("scm-out"))
    }
}

/// How the time axis is cut into blocks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PartitionSpec {
    Edges(Vec<f64>),
    Count(usize),
    Width(f64),
}

impl PartitionSpec {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match (&cfg.edges, cfg.blocks, cfg.block_width) {
            (Some(e), None, None) => Ok(PartitionSpec::Edges(e.clone())),
            (None, Some(b), None) => Ok(PartitionSpec::Count(b)),
            (None, None, Some(w)) => Ok(PartitionSpec::Width(w)),
            (None, None, None) => Err(ScmError::Config(
                "no partition given; supply `edges`, `blocks` or `block_width`".into(),
            )),
            _ => Err(ScmError::Config("supply exactly one of `edges`, `blocks` and `block_width`".into())),
        }
    }

    /// Uniform specifications span the observed time range.
    pub fn resolve(&self, data: Option<&LongData>) -> Result<Partition> {
        if let PartitionSpec::Edges(e) = self {
            return Partition::new(e.clone());
        }
        let (lo, hi) = data
            .and_then(LongData::time_range)
            .ok_or_else(|| ScmError::Config("a uniform block specification needs data to span".into()))?;
        match self {
            PartitionSpec::Count(b) => Partition::uniform(lo, hi, *b),
            PartitionSpec::Width(w) => Partition::with_width(lo, hi, *w),
            PartitionSpec::Edges(_) => unreachable!(),
        }
    }
}

/// Settings that determine numeric output; schema and workers are excluded
/// because they never change results.
#[derive(Clone, Debug, Serialize)]
pub struct FitSettings {
    pub q: usize,
    pub p: usize,
    pub partition: PartitionSpec,
    pub degrees: Vec<usize>,
    pub scaled: bool,
    pub smoothness: Smoothness,
    pub correlation: WorkingCorrelation,
    pub link: LinkFunction,
    pub lambda_grid: Vec<f64>,
    pub alpha: f64,
    pub grid_step: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl FitSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let q = cfg.q.ok_or_else(|| ScmError::Config("`q` (number of functional covariates) is required".into()))?;
        let p = cfg.p.unwrap_or(0);
        let degrees = match cfg.degrees.as_deref() {
            None => vec![3; q],
            Some([d]) => vec![*d; q],
            Some(ds) if ds.len() == q => ds.to_vec(),
            Some(ds) => {
                return Err(ScmError::Config(format!("{} basis degrees given for q = {q} covariates", ds.len())))
            }
        };
        let s = FitSettings {
            q,
            p,
            partition: PartitionSpec::from_config(cfg)?,
            degrees,
            scaled: cfg.scaled.unwrap_or(true),
            smoothness: cfg.smoothness.unwrap_or_default(),
            correlation: cfg.correlation.unwrap_or_default(),
            link: cfg.link.unwrap_or_default(),
            lambda_grid: cfg.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
            alpha: cfg.alpha.unwrap_or(0.05),
            grid_step: cfg.grid_step,
            tol: cfg.tol.unwrap_or(SolverSettings::default().tol),
            max_iter: cfg.max_iter.unwrap_or(SolverSettings::default().max_iter),
        };
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(ScmError::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(s)
    }

    pub fn pipeline(&self, partition: Partition, schema: Schema) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            partition,
            basis: BasisSpec::new(self.degrees.clone(), self.scaled)?,
            link: self.link,
            correlation: self.correlation,
            smoothness: self.smoothness,
            lambda_grid: self.lambda_grid.clone(),
            alpha: self.alpha,
            schema,
            solver: SolverSettings { tol: self.tol, max_iter: self.max_iter },
            curve_grid: self.grid_step.map_or(CurveGrid::Observed, CurveGrid::Step),
        };
        cfg.validate(self.p)?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn schema_of(cfg: &RunConfig) -> Result<Schema> {
    Schema::from_number(cfg.schema.unwrap_or(1))
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("settings serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
