//! WebAssembly bindings for the demo page. Every export returns JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scm_core::combine::GcvEntry;
use scm_core::pipeline::fit;
use scm_core::simulate::{run_mc, McReport, McWorkers, Scenario, ScenarioKind};
use scm_core::{Result, ScmError};

/// Browser-side caps so a click cannot hang the tab for minutes.
pub const MAX_SUBJECTS: usize = 2000;
pub const MAX_REPS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: f64,
    pub beta_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitView {
    pub scenario: String,
    pub n: usize,
    pub edges: Vec<f64>,
    pub lambda: f64,
    pub eta: Vec<f64>,
    pub eta_truth: Option<f64>,
    pub curve: Vec<CurveRow>,
    pub gcv: Vec<GcvEntry>,
}

fn scenario(name: &str, n: usize, seed: u64) -> Result<Scenario> {
    if n == 0 || n > MAX_SUBJECTS {
        return Err(ScmError::Config(format!("subjects must be in 1..={MAX_SUBJECTS}")));
    }
    let mut sc = Scenario::preset(ScenarioKind::parse(name)?, seed, false);
    sc.n = n;
    sc.validate()?;
    Ok(sc)
}

/// Simulate one data set, fit it, and return the curve with its bands and the truth.
/// An empty `lambdas` keeps the scenario's own grid.
pub fn simulate_and_fit(name: &str, n: usize, seed: u64, lambdas: &[f64]) -> Result<FitView> {
    let sc = scenario(name, n, seed)?;
    let mut cfg = sc.pipeline_config()?;
    if !lambdas.is_empty() {
        cfg.lambda_grid = lambdas.to_vec();
    }
    let data = sc.generate(0)?;
    let out = fit(&data, &cfg)?;
    Ok(FitView {
        scenario: sc.kind.name().to_string(),
        n,
        edges: cfg.partition.edges().to_vec(),
        lambda: out.lambda,
        eta: out.eta.iter().map(|e| e.estimate).collect(),
        eta_truth: sc.eta(),
        curve: out
            .curves
            .iter()
            .map(|c| CurveRow { t: c.t, beta_hat: c.beta_hat, lower: c.lower, upper: c.upper, truth: sc.beta(c.t) })
            .collect(),
        gcv: out.selection.table,
    })
}

/// Small Monte Carlo study on one worker.
pub fn coverage_study(name: &str, n: usize, seed: u64, reps: usize) -> Result<McReport> {
    if reps == 0 || reps > MAX_REPS {
        return Err(ScmError::Config(format!("replicates must be in 1..={MAX_REPS}")));
    }
    let sc = scenario(name, n, seed)?;
    let cfg = sc.pipeline_config()?;
    run_mc(&sc, &cfg, reps, &[cfg.schema], McWorkers::default())
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = scenarioNames)]
pub fn scenario_names() -> Vec<String> {
    ScenarioKind::NAMES.iter().map(|s| s.to_string()).collect()
}

/// Fitted curve, pointwise bands and true curve for one simulated data set.
#[wasm_bindgen(js_name = fitCurve)]
pub fn fit_curve(name: &str, n: u32, seed: u32) -> std::result::Result<String, JsError> {
    to_js(simulate_and_fit(name, n as usize, seed as u64, &[]))
}

/// GCV criterion over a user-supplied smoothing grid.
#[wasm_bindgen(js_name = gcvProfile)]
pub fn gcv_profile(name: &str, n: u32, seed: u32, lambdas: Vec<f64>) -> std::result::Result<String, JsError> {
    if lambdas.is_empty() {
        return Err(JsError::new("give at least one smoothing value"));
    }
    to_js(simulate_and_fit(name, n as usize, seed as u64, &lambdas))
}

/// Monte Carlo report including pointwise coverage of the curve bands.
#[wasm_bindgen(js_name = coverage)]
pub fn coverage(name: &str, n: u32, seed: u32, reps: u32) -> std::result::Result<String, JsError> {
    to_js(coverage_study(name, n as usize, seed as u64, reps as usize))
}
