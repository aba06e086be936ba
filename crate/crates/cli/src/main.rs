#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use scm_core::combine::Schema;
use scm_core::constraint::ConstraintMap;
use scm_core::partition::{split, LongData};
use scm_core::pipeline::{curves_csv, fit, with_workers, Metadata, ResultBundle};
use scm_core::simulate::{run_mc, McReport, McWorkers, Scenario, ScenarioKind};
use scm_core::{Result, ScmError};

use config::{hash_json, schema_of, FitSettings, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "scm", version, about = "Split-and-combine varying-coefficient fits for longitudinal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a long-format CSV file.
    Fit(FitArgs),
    /// Run a Monte Carlo study of a built-in scenario.
    Simulate(SimulateArgs),
    /// Write the constraint matrices `H` and `R~` without fitting.
    DumpConstraints(FitArgs),
}

/// Options shared by `fit` and `simulate`.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Candidate smoothing parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// 1: candidates in parallel; 2: blocks in parallel per candidate.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    schema: Option<u8>,
    /// Worker threads (per replicate for `simulate`).
    #[arg(long)]
    workers: Option<usize>,
    /// Band level: bands have coverage 1 - alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Block solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Block solver iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSV with columns id,time,y,x1..xq,z1..zp.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of functional covariates.
    #[arg(short, long)]
    q: Option<usize>,
    /// Number of scalar covariates.
    #[arg(short, long)]
    p: Option<usize>,
    /// Partition edges, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    edges: Option<Vec<f64>>,
    /// Number of equal-width blocks over the observed time range.
    #[arg(long)]
    blocks: Option<usize>,
    /// Target block width over the observed time range.
    #[arg(long)]
    block_width: Option<f64>,
    /// Polynomial degree per functional covariate, or one for all.
    #[arg(long, value_delimiter = ',')]
    degrees: Option<Vec<usize>>,
    /// Rescale each block to [0, 1] before building the basis.
    #[arg(long)]
    scaled: Option<bool>,
    #[arg(long, value_parser = ["none", "c0", "c1"])]
    smoothness: Option<String>,
    #[arg(long, value_parser = ["independence", "ar1", "exchangeable"])]
    correlation: Option<String>,
    #[arg(long, value_parser = ["identity", "log"])]
    link: Option<String>,
    /// Curve grid step; defaults to the observed times.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Also write the constraint matrices (fit only).
    #[arg(long)]
    dump_constraints: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Built-in scenario.
    #[arg(long, value_parser = ScenarioKind::NAMES)]
    scenario: Option<String>,
    /// Monte Carlo replicates.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of subjects.
    #[arg(long)]
    n: Option<usize>,
    /// Use the full-scale variant where one exists.
    #[arg(long)]
    full_scale: bool,
    /// Replicates run at once.
    #[arg(long)]
    replicate_workers: Option<usize>,
    /// Time both schemas in every replicate.
    #[arg(long)]
    both_schemas: bool,
}

fn lowercase_enum<T: serde::de::DeserializeOwned>(s: Option<String>) -> Option<T> {
    // values were restricted by clap, so they always deserialize
    s.map(|s| serde_json::from_value(serde_json::Value::String(s)).expect("validated by clap"))
}

impl CommonArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.output = self.output.clone();
        c.lambda_grid = self.lambda_grid.clone();
        c.schema = self.schema;
        c.workers = self.workers;
        c.alpha = self.alpha;
        c.tol = self.tol;
        c.max_iter = self.max_iter;
    }
}

impl FitArgs {
    fn to_config(&self) -> RunConfig {
        let mut c = RunConfig {
            data: self.data.clone(),
            q: self.q,
            p: self.p,
            edges: self.edges.clone(),
            blocks: self.blocks,
            block_width: self.block_width,
            degrees: self.degrees.clone(),
            scaled: self.scaled,
            smoothness: lowercase_enum(self.smoothness.clone()),
            correlation: lowercase_enum(self.correlation.clone()),
            link: lowercase_enum(self.link.clone()),
            grid_step: self.grid_step,
            ..Default::default()
        };
        self.common.apply(&mut c);
        c
    }
}

impl SimulateArgs {
    fn to_config(&self) -> RunConfig {
        let mut c = RunConfig {
            scenario: self.scenario.clone(),
            reps: self.reps,
            seed: self.seed,
            n: self.n,
            full_scale: self.full_scale.then_some(true),
            replicate_workers: self.replicate_workers,
            both_schemas: self.both_schemas.then_some(true),
            ..Default::default()
        };
        self.common.apply(&mut c);
        c
    }
}

fn merged(file: &Option<PathBuf>, flags: RunConfig) -> Result<RunConfig> {
    match file {
        Some(path) => RunConfig::load(path)?.overlay(flags),
        None => Ok(flags),
    }
}

/// Write every file or none: all contents are built before the first write.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ScmError::Data(format!("cannot create {}: {e}", dir.display())))?;
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| ScmError::Data(format!("cannot write {}: {e}", path.display())))?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn read_data(cfg: &RunConfig, settings: &FitSettings) -> Result<LongData> {
    let path = cfg.data.as_ref().ok_or_else(|| ScmError::Config("no data file given (`--data`)".into()))?;
    let file = fs::File::open(path).map_err(|e| ScmError::Data(format!("cannot open {}: {e}", path.display())))?;
    LongData::read_csv(std::io::BufReader::new(file), settings.q, settings.p)
        .map_err(|e| e.context(path.display().to_string()))
}

fn constraint_files(cmap: &ConstraintMap, meta: &Metadata) -> Vec<(&'static str, String)> {
    let header = format!("# {} {} config_hash={}\n", meta.tool, meta.version, meta.config_hash);
    vec![
        ("H.csv", format!("{header}{}", ConstraintMap::matrix_csv(&cmap.h))),
        ("Rtilde.csv", format!("{header}{}", ConstraintMap::matrix_csv(&cmap.rtilde))),
    ]
}

fn run_fit(args: FitArgs) -> Result<()> {
    let cfg = merged(&args.common.config, args.to_config())?;
    let settings = FitSettings::from_config(&cfg)?;
    let schema = schema_of(&cfg)?;
    let meta = Metadata::new(settings.hash());
    let data = read_data(&cfg, &settings)?;
    let partition = settings.partition.resolve(Some(&data))?;
    let pipeline = settings.pipeline(partition, schema)?;
    let out = with_workers(cfg.workers, || fit(&data, &pipeline))?;
    let blocks = split(&data, &pipeline.partition)?;
    let bundle = ResultBundle::new(&out, &data, &pipeline, &blocks, meta.clone());
    let mut files = vec![("result.json", bundle.to_json()?), ("curves.csv", curves_csv(&out.curves, &meta))];
    if args.dump_constraints {
        files.extend(constraint_files(&out.cmap, &meta));
    }
    write_outputs(&cfg.output_dir(), &files)
}

fn run_dump(args: FitArgs) -> Result<()> {
    let cfg = merged(&args.common.config, args.to_config())?;
    let settings = FitSettings::from_config(&cfg)?;
    let meta = Metadata::new(settings.hash());
    let data = match cfg.data {
        Some(_) => Some(read_data(&cfg, &settings)?),
        None => None,
    };
    let partition = settings.partition.resolve(data.as_ref())?;
    let cmap = settings.pipeline(partition, schema_of(&cfg)?)?.validate(settings.p)?;
    write_outputs(&cfg.output_dir(), &constraint_files(&cmap, &meta))
}

#[derive(Serialize)]
struct SimulateSettings<'a> {
    scenario: &'a Scenario,
    reps: usize,
    lambda_grid: &'a [f64],
    alpha: f64,
    tol: f64,
    max_iter: usize,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    metadata: &'a Metadata,
    report: &'a McReport,
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = merged(&args.common.config, args.to_config())?;
    for (key, set) in [
        ("data", cfg.data.is_some()),
        ("q", cfg.q.is_some()),
        ("p", cfg.p.is_some()),
        ("edges", cfg.edges.is_some()),
        ("blocks", cfg.blocks.is_some()),
        ("block_width", cfg.block_width.is_some()),
        ("degrees", cfg.degrees.is_some()),
        ("smoothness", cfg.smoothness.is_some()),
        ("correlation", cfg.correlation.is_some()),
        ("link", cfg.link.is_some()),
        ("grid_step", cfg.grid_step.is_some()),
    ] {
        if set {
            return Err(ScmError::Config(format!("`{key}` is fixed by the scenario and cannot be set for simulate")));
        }
    }
    let name = cfg.scenario.as_deref().ok_or_else(|| {
        ScmError::Config(format!("no scenario given; choose one of {}", ScenarioKind::NAMES.join(", ")))
    })?;
    let kind = ScenarioKind::parse(name)?;
    let mut sc = Scenario::preset(kind, cfg.seed.unwrap_or(1), cfg.full_scale.unwrap_or(false));
    if let Some(n) = cfg.n {
        sc.n = n;
    }
    sc.validate()?;
    let reps = cfg.reps.unwrap_or(100);
    let mut pipeline = sc.pipeline_config()?;
    if let Some(g) = &cfg.lambda_grid {
        pipeline.lambda_grid = g.clone();
    }
    if let Some(a) = cfg.alpha {
        pipeline.alpha = a;
    }
    if let Some(t) = cfg.tol {
        pipeline.solver.tol = t;
    }
    if let Some(m) = cfg.max_iter {
        pipeline.solver.max_iter = m;
    }
    pipeline.schema = schema_of(&cfg)?;
    pipeline.validate(sc.p())?;
    let schemas = if cfg.both_schemas.unwrap_or(false) {
        vec![Schema::LambdaParallel, Schema::BlockParallel]
    } else {
        vec![pipeline.schema]
    };
    let workers = McWorkers {
        replicates: cfg.replicate_workers.unwrap_or(1),
        per_replicate: cfg.workers.unwrap_or(1),
    };
    let meta = Metadata::new(hash_json(&SimulateSettings {
        scenario: &sc,
        reps,
        lambda_grid: &pipeline.lambda_grid,
        alpha: pipeline.alpha,
        tol: pipeline.solver.tol,
        max_iter: pipeline.solver.max_iter,
    }));
    let report = run_mc(&sc, &pipeline, reps, &schemas, workers)?;
    let table = report.text_table();
    print!("{table}");
    let json = serde_json::to_string_pretty(&SimulateOutput { metadata: &meta, report: &report })
        .map_err(|e| ScmError::Data(format!("cannot serialize report: {e}")))?;
    let text = format!("# {} {} config_hash={}\n{table}", meta.tool, meta.version, meta.config_hash);
    write_outputs(&cfg.output_dir(), &[("report.json", json), ("report.txt", text)])
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::DumpConstraints(a) => run_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
