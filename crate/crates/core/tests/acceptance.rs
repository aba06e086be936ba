//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::combine::{gmm_iterative, scm_one_step, stack, BlockMoments, Schema};
use scm_core::constraint::{ConstraintMap, Smoothness};
use scm_core::linalg::{rank, Mat, Vector};
use scm_core::model::{basis_row, mean_and_jacobian, BasisSpec, BlockModel, LinkFunction};
use scm_core::partition::{split, LongData, Partition};
use scm_core::pipeline::{
    curves_csv, fit, fit_blocks, with_workers, BlockEvaluator, Metadata, PipelineConfig, ResultBundle,
};
use scm_core::qif::{
    extended_score, factor_c, fit_block, qif_objective, qif_value_with_fixed_c, SolverSettings, WorkingCorrelation,
};
use scm_core::simulate::{run_mc, McReport, McWorkers, Scenario};

use common::{config, median, smooth_curve_data};

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn workers() -> McWorkers {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    McWorkers { replicates: n, per_replicate: 1 }
}

fn mc(sc: &Scenario, reps: usize) -> McReport {
    let cfg = sc.pipeline_config().expect("scenario config");
    run_mc(sc, &cfg, reps, &[Schema::LambdaParallel], workers()).expect("monte carlo run")
}

fn criterion_1() -> Outcome {
    let r = mc(&Scenario::broken_stick(20240601), 200);
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &r.parameters {
        let ratio = p.ase / p.ese.unwrap_or(f64::NAN);
        pass &= within(p.cp, 0.91, 0.98) && p.bias.abs() <= 0.03 && within(ratio, 0.85, 1.15);
        parts.push(format!("{}: CP {:.3} bias {:+.4} ASE/ESE {:.3}", p.name, p.cp, p.bias, ratio));
    }
    pass &= within(r.curve.average, 0.92, 0.98);
    Outcome {
        pass,
        detail: format!(
            "broken stick N=1000, {} reps; {}; pointwise beta CP {:.3}",
            r.succeeded,
            parts.join("; "),
            r.curve.average
        ),
    }
}

fn criterion_2() -> Outcome {
    let r = mc(&Scenario::known_cubic(20240602), 200);
    let eta = r.row("eta1").expect("eta row").cp;
    let gamma = r.gamma_cp();
    let pass = within(eta, 0.91, 0.99) && within(gamma, 0.90, 0.98) && within(r.curve.average, 0.91, 0.99);
    Outcome {
        pass,
        detail: format!(
            "known cubic N=500, J=5, C1, {} reps; eta CP {:.3}; mean gamma CP {:.3}; pointwise beta CP {:.3}; mean lambda {:.1e}",
            r.succeeded, eta, gamma, r.curve.average, r.mean_lambda
        ),
    }
}

fn criterion_3() -> Outcome {
    let r = mc(&Scenario::poisson_copula(20240603), 200);
    let eta = r.row("eta1").expect("eta row").cp;
    let pass = within(eta, 0.90, 0.99) && within(r.curve.average, 0.90, 0.99);
    Outcome {
        pass,
        detail: format!(
            "Poisson copula N=300, M=144, J=5, {} reps ({} failed); eta CP {:.3}; time-averaged beta CP {:.3}",
            r.succeeded, r.failed, eta, r.curve.average
        ),
    }
}

fn fitted_edge_gap(out: &scm_core::pipeline::FitOutput, part: &Partition, c1: bool) -> f64 {
    let theta = out.theta();
    let layout = &out.cmap.layout;
    let mut worst: f64 = 0.0;
    for j in 0..part.blocks() - 1 {
        let c = part.edges()[j + 1];
        for deriv in [false, true] {
            if deriv && !c1 {
                continue;
            }
            let l = layout.curve_row(part, true, 0, j, c, deriv).unwrap().dot(&theta);
            let r = layout.curve_row(part, true, 0, j + 1, c, deriv).unwrap().dot(&theta);
            worst = worst.max((l - r).abs());
        }
    }
    worst
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_h, mut worst_cont, mut checked, mut rank_ok) = (0.0f64, 0.0f64, 0usize, true);
    for _ in 0..100 {
        let jn = rng.random_range(1..=8usize);
        let q = rng.random_range(1..=3usize);
        let p = rng.random_range(0..=3usize);
        let degrees: Vec<usize> = (0..q).map(|_| rng.random_range(1..=4usize)).collect();
        let mut edges = vec![rng.random_range(-5.0..5.0)];
        for _ in 0..jn {
            let last = *edges.last().unwrap();
            edges.push(last + rng.random_range(0.2..4.0));
        }
        let part = Partition::new(edges).unwrap();
        let basis = BasisSpec::new(degrees.clone(), true).unwrap();
        let classes: Vec<Smoothness> = if degrees.iter().all(|&d| d >= 2) {
            vec![Smoothness::C0, Smoothness::C1]
        } else {
            vec![Smoothness::C0]
        };
        for class in classes {
            let cm = ConstraintMap::new(&part, &basis, class, p).unwrap();
            let rh = rank(&cm.h, 1e-10);
            rank_ok &= rh == cm.h.nrows()
                && cm.reduced_dim() == cm.layout.dim() - rh
                && rank(&cm.rtilde, 1e-10) == cm.reduced_dim();
            let ts = Vector::from_fn(cm.reduced_dim(), |_, _| rng.random_range(-1.0..1.0));
            let theta = cm.expand(&ts);
            let hg = &cm.h * theta.rows(0, cm.layout.gamma_dim());
            worst_h = worst_h.max(hg.amax());
            for u in 0..q {
                for j in 0..jn - 1 {
                    let c = part.edges()[j + 1];
                    for deriv in [false, class == Smoothness::C1] {
                        let l = cm.layout.curve_row(&part, true, u, j, c, deriv).unwrap().dot(&theta);
                        let r = cm.layout.curve_row(&part, true, u, j + 1, c, deriv).unwrap().dot(&theta);
                        worst_cont = worst_cont.max((l - r).abs());
                    }
                }
            }
            checked += 1;
        }
    }
    // continuity of actually fitted curves
    let bs = Scenario::broken_stick(41);
    let bs_cfg = bs.pipeline_config().unwrap();
    let bs_out = fit(&bs.generate(0).unwrap(), &bs_cfg).unwrap();
    let kc = Scenario::known_cubic(42);
    let kc_cfg = kc.pipeline_config().unwrap();
    let kc_out = fit(&kc.generate(0).unwrap(), &kc_cfg).unwrap();
    let fitted = fitted_edge_gap(&bs_out, &bs_cfg.partition, false).max(fitted_edge_gap(&kc_out, &kc_cfg.partition, true));
    let pass = worst_h <= 1e-12 && worst_cont <= 1e-8 && rank_ok && fitted <= 1e-8;
    Outcome {
        pass,
        detail: format!(
            "100 random configurations ({checked} class instances); max |H gamma| {worst_h:.1e}; rank identities {}; \
             max edge jump {worst_cont:.1e}; fitted curve edge jump {fitted:.1e}",
            if rank_ok { "hold" } else { "FAIL" }
        ),
    }
}

fn criterion_5() -> Outcome {
    // J = 1, λ = 0, no constraints: combined estimate equals the block estimate
    let data = smooth_curve_data(150, 15, 51);
    let cfg = config(Partition::new(vec![0.0, 3.0]).unwrap(), vec![3], Smoothness::None, WorkingCorrelation::Ar1, vec![0.0]);
    let blocks = split(&data, &cfg.partition).unwrap();
    let fits = fit_blocks(&blocks, &cfg, data.p).unwrap();
    let cmap = cfg.validate(data.p).unwrap();
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let scm = scm_one_step(&sm, &cmap, 0.0).unwrap();
    let gap_scm = (&scm - &fits[0].theta).amax();
    let piped = fit(&data, &cfg).unwrap();
    let gap_pipe = (&piped.theta_star - &fits[0].theta).amax();

    // independence + identity + one block: QIF root is least squares
    let model = cfg.block_model(0, data.p);
    let qif = fit_block(&blocks[0], &model, WorkingCorrelation::Independence, None, SolverSettings::default()).unwrap();
    let k = model.dim();
    let mut xtx = Mat::zeros(k, k);
    let mut xty = Vector::zeros(k);
    for s in &data.subjects {
        for t in 0..s.len() {
            let mut row = basis_row(s.times[t], (0.0, 3.0), 3, true).unwrap();
            for v in &mut row {
                *v *= s.x[t];
            }
            row.push(s.z[t]);
            let r = Vector::from_vec(row);
            xtx += &r * r.transpose();
            xty += &r * s.y[t];
        }
    }
    let ols = xtx.lu().solve(&xty).unwrap();
    let gap_ols = (&qif.theta - &ols).amax();
    Outcome {
        pass: gap_scm <= 1e-10 && gap_pipe <= 1e-10 && gap_ols <= 1e-8,
        detail: format!(
            "single block: |SCM - QIF| {gap_scm:.1e} (pipeline {gap_pipe:.1e}); independence QIF vs normal equations {gap_ols:.1e}"
        ),
    }
}

fn criterion_6() -> Outcome {
    let data = smooth_curve_data(50, 12, 61);
    let part = Partition::uniform(0.0, 3.0, 2).unwrap();
    let blocks = split(&data, &part).unwrap();
    let basis = BasisSpec::new(vec![2], true).unwrap();
    // QIF gradient with C held at the evaluation point
    let model = BlockModel { block: 0, edges: part.block_edges(0), basis: basis.clone(), link: LinkFunction::Identity, p: 1 };
    let f = fit_block(&blocks[0], &model, WorkingCorrelation::Ar1, None, SolverSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = &f.theta + Vector::from_fn(f.theta.len(), |_, _| rng.random_range(-0.3..0.3));
    let obj = qif_objective(&theta, &blocks[0], &f.qif).unwrap();
    let cf = factor_c(&obj.c).unwrap();
    let mut grad_err: f64 = 0.0;
    for c in 0..theta.len() {
        let h = 1e-5;
        let mut up = theta.clone();
        up[c] += h;
        let mut dn = theta.clone();
        dn[c] -= h;
        let fd = (qif_value_with_fixed_c(&up, &blocks[0], &f.qif, &cf).unwrap()
            - qif_value_with_fixed_c(&dn, &blocks[0], &f.qif, &cf).unwrap())
            / (2.0 * h);
        grad_err = grad_err.max((fd - obj.gradient[c]).abs() / obj.gradient.amax());
    }
    // mean-model Jacobian under both links
    let mut jac_err: f64 = 0.0;
    for link in [LinkFunction::Identity, LinkFunction::Log] {
        let m = BlockModel { link, ..model.clone() };
        let sb = &blocks[0].subjects[0];
        let th = Vector::from_fn(m.dim(), |_, _| rng.random_range(-0.5..0.5));
        let (_, jac) = mean_and_jacobian(&th, &sb.x, &sb.z, &sb.times, &m).unwrap();
        for c in 0..th.len() {
            let h = 1e-6;
            let mut up = th.clone();
            up[c] += h;
            let mut dn = th.clone();
            dn[c] -= h;
            let fd = (mean_and_jacobian(&up, &sb.x, &sb.z, &sb.times, &m).unwrap().0
                - mean_and_jacobian(&dn, &sb.x, &sb.z, &sb.times, &m).unwrap().0)
                / (2.0 * h);
            jac_err = jac_err.max((fd - jac.column(c)).amax() / jac.amax());
        }
    }
    // V against a double loop over subjects
    let cfg = config(part.clone(), vec![2], Smoothness::C1, WorkingCorrelation::Ar1, vec![0.0]);
    let fits = fit_blocks(&blocks, &cfg, 1).unwrap();
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &ConstraintMap::new(&part, &basis, Smoothness::C1, 1).unwrap().layout).unwrap();
    let n = data.n_subjects();
    let mut brute = Mat::zeros(sm.v.nrows(), sm.v.ncols());
    for i in 0..n {
        let mut gi: Vec<f64> = Vec::new();
        for (j, fit) in fits.iter().enumerate() {
            let ev = extended_score(&fit.theta, &blocks[j], &fit.qif).unwrap();
            let cinv = factor_c(&ev.weight_matrix()).unwrap();
            let row = ev.scores.row(i).transpose();
            gi.extend((ev.jacobian.transpose() * cinv.solve_vec(&row)).iter());
        }
        for a in 0..gi.len() {
            for b in 0..gi.len() {
                brute[(a, b)] += gi[a] * gi[b] / n as f64;
            }
        }
    }
    let v_err = (&brute - &sm.v).amax() / sm.v.amax().max(1.0);
    Outcome {
        pass: grad_err < 1e-5 && jac_err < 1e-5 && v_err <= 1e-12,
        detail: format!(
            "QIF gradient rel err {grad_err:.1e}; mean Jacobian rel err {jac_err:.1e}; V brute force (N=50) rel err {v_err:.1e}"
        ),
    }
}

fn scm_gmm_gap(n: usize, rep: u64) -> f64 {
    let sc = Scenario { n, ..Scenario::broken_stick(7007) };
    let data = sc.generate(rep).unwrap();
    let cfg = sc.pipeline_config().unwrap();
    let cmap = cfg.validate(0).unwrap();
    let blocks = split(&data, &cfg.partition).unwrap();
    let fits = fit_blocks(&blocks, &cfg, 0).unwrap();
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let src = BlockEvaluator { blocks: &blocks, models: fits.iter().map(|f| f.qif.clone()).collect() };
    let scm = scm_one_step(&sm, &cmap, 0.0).unwrap();
    let gmm = gmm_iterative(&src, &cmap, &sm, 0.0, scm.clone(), 1e-10, 100).unwrap();
    (&scm - &gmm.theta_star).norm()
}

fn criterion_7() -> Outcome {
    let small = median((0..50).map(|r| scm_gmm_gap(250, r)).collect());
    let large = median((0..50).map(|r| scm_gmm_gap(2000, r)).collect());
    Outcome {
        pass: large < 0.6 * small,
        detail: format!(
            "median |SCM - iterated GMM|: N=250 {small:.3e}, N=2000 {large:.3e} (ratio {:.3})",
            large / small
        ),
    }
}

fn bundle_bytes(data: &LongData, cfg: &PipelineConfig, workers: usize) -> (String, String) {
    let out = with_workers(Some(workers), || fit(data, cfg)).unwrap();
    let blocks = split(data, &cfg.partition).unwrap();
    let meta = Metadata::new("acceptance");
    let bundle = ResultBundle::new(&out, data, cfg, &blocks, meta.clone());
    (bundle.to_json().unwrap(), curves_csv(&out.curves, &meta))
}

fn criterion_8() -> Outcome {
    let sc = Scenario { n: 300, ..Scenario::known_cubic(88) };
    let data = sc.generate(0).unwrap();
    let cfg1 = PipelineConfig { schema: Schema::LambdaParallel, ..sc.pipeline_config().unwrap() };
    let cfg2 = PipelineConfig { schema: Schema::BlockParallel, ..cfg1.clone() };
    let reference = bundle_bytes(&data, &cfg1, 1);
    let variants = [(&cfg1, 4), (&cfg2, 1), (&cfg2, 4)];
    let identical = variants.iter().all(|(c, w)| bundle_bytes(&data, c, *w) == reference);
    Outcome {
        pass: identical,
        detail: format!(
            "schema (i)/(ii) x workers 1/4 on known-cubic data: bundles and curve CSVs {} ({} bytes)",
            if identical { "byte-identical" } else { "DIFFER" },
            reference.0.len() + reference.1.len()
        ),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 broken stick reproduction", criterion_1),
        ("2 known cubic", criterion_2),
        ("3 Poisson copula (desk scale)", criterion_3),
        ("4 constraint identities", criterion_4),
        ("5 reduction identities", criterion_5),
        ("6 gradient and covariance oracles", criterion_6),
        ("7 asymptotic-equivalence surrogate", criterion_7),
        ("8 determinism and schema equivalence", criterion_8),
    ];
    let only: Option<Vec<String>> = std::env::var("SCM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let mut failed = 0;
    for (name, run) in criteria {
        let number = name.split(' ').next().unwrap();
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == number)) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
