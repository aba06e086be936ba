#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scm_core::combine::Schema;
use scm_core::constraint::Smoothness;
use scm_core::model::{BasisSpec, LinkFunction};
use scm_core::partition::{LongData, Partition, SubjectSeries};
use scm_core::pipeline::{CurveGrid, PipelineConfig};
use scm_core::qif::{SolverSettings, WorkingCorrelation};

/// Scalar covariates only: `y = zᵀη + AR(1) noise` on `t = 0..m-1`.
pub fn scalar_only_data(n: usize, m: usize, eta: &[f64], seed: u64) -> LongData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = eta.len();
    let subjects = (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..m * p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut e: f64 = rng.sample(StandardNormal);
            let y = (0..m)
                .map(|t| {
                    if t > 0 {
                        e = 0.6 * e + 0.8 * rng.sample::<f64, _>(StandardNormal);
                    }
                    (0..p).map(|k| z[t * p + k] * eta[k]).sum::<f64>() + e
                })
                .collect();
            SubjectSeries { id: i as i64, times: (0..m).map(|t| t as f64).collect(), y, x: vec![], z }
        })
        .collect();
    LongData { q: 0, p, subjects }
}

/// One functional covariate `x ~ N(0,1)` with `β(t) = sin(t)` and one scalar.
pub fn smooth_curve_data(n: usize, m: usize, seed: u64) -> LongData {
    curve_data(n, m, seed, f64::sin)
}

/// `y = x β(t) + 0.8 z + AR(1) noise` on `m` equally spaced times in `[0, 3]`.
pub fn curve_data(n: usize, m: usize, seed: u64, beta: impl Fn(f64) -> f64) -> LongData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let times: Vec<f64> = (0..m).map(|t| 3.0 * t as f64 / (m - 1) as f64).collect();
            let x: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let z: Vec<f64> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
            let mut e: f64 = rng.sample(StandardNormal);
            let y = (0..m)
                .map(|t| {
                    if t > 0 {
                        e = 0.5 * e + (0.75f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    }
                    x[t] * beta(times[t]) + 0.8 * z[t] + e
                })
                .collect();
            SubjectSeries { id: i as i64, times, y, x, z }
        })
        .collect();
    LongData { q: 1, p: 1, subjects }
}

pub fn config(
    partition: Partition,
    degrees: Vec<usize>,
    smoothness: Smoothness,
    correlation: WorkingCorrelation,
    lambda_grid: Vec<f64>,
) -> PipelineConfig {
    PipelineConfig {
        partition,
        basis: BasisSpec::new(degrees, true).unwrap(),
        link: LinkFunction::Identity,
        correlation,
        smoothness,
        lambda_grid,
        alpha: 0.05,
        schema: Schema::LambdaParallel,
        solver: SolverSettings::default(),
        curve_grid: CurveGrid::Observed,
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
