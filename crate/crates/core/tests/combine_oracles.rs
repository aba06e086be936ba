mod common;

use common::{config, median, scalar_only_data, smooth_curve_data};
use scm_core::combine::{
    covariance, evaluate_at, gcv, gmm_iterative, gmm_objective, scm_one_step, stack, BlockMoments, Schema,
};
use scm_core::constraint::Smoothness;
use scm_core::linalg::{min_eigenvalue, Mat, Vector};
use scm_core::partition::{split, Partition};
use scm_core::pipeline::{fit, fit_blocks, BlockEvaluator};
use scm_core::qif::WorkingCorrelation;
use scm_core::simulate::Scenario;

fn block_setup(
    data: &scm_core::partition::LongData,
    cfg: &scm_core::pipeline::PipelineConfig,
) -> (Vec<scm_core::partition::BlockData>, Vec<scm_core::qif::BlockFit>, scm_core::constraint::ConstraintMap) {
    let cmap = cfg.validate(data.p).unwrap();
    let blocks = split(data, &cfg.partition).unwrap();
    let fits = fit_blocks(&blocks, cfg, data.p).unwrap();
    (blocks, fits, cmap)
}

#[test]
fn single_block_first_order_condition_vanishes() {
    let data = smooth_curve_data(120, 12, 1);
    let mut cfg = config(Partition::new(vec![0.0, 3.0]).unwrap(), vec![3], Smoothness::None, WorkingCorrelation::Ar1, vec![0.0]);
    cfg.lambda_grid = vec![0.0];
    let (_, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    // N·Ḡ is the solver's estimating function up to the factor 2
    assert!(sm.gbar.amax() * 2.0 * sm.n as f64 <= 1e-6, "{}", sm.gbar.amax());
}

#[test]
fn homogeneous_combiner_special_case() {
    // q = 0, λ = 0: θ* = η and the one-step estimate is
    // (Σ_jk Γ_jᵀ V^{jk} Γ_k)⁻¹ Σ_jk Γ_jᵀ V^{jk} Γ_k η̂_k
    let data = scalar_only_data(150, 16, &[1.5, -0.5], 4);
    let cfg = config(
        Partition::new(vec![0.0, 4.0, 8.0, 12.0, 15.0]).unwrap(),
        vec![],
        Smoothness::None,
        WorkingCorrelation::Ar1,
        vec![0.0],
    );
    let (_, fits, cmap) = block_setup(&data, &cfg);
    assert_eq!(cmap.reduced_dim(), 2);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let got = scm_one_step(&sm, &cmap, 0.0).unwrap();

    let jn = fits.len();
    let vinv = sm.v.clone().try_inverse().unwrap();
    let mut lhs = Mat::zeros(2, 2);
    let mut rhs = Vector::zeros(2);
    for j in 0..jn {
        for k in 0..jn {
            let vjk = vinv.view((2 * j, 2 * k), (2, 2));
            let w = m[j].gamma.transpose() * vjk * &m[k].gamma;
            lhs += &w;
            rhs += &w * &fits[k].theta;
        }
    }
    let want = lhs.try_inverse().unwrap() * rhs;
    assert!((&got - &want).amax() < 1e-9 * want.amax().max(1.0), "{got} vs {want}");
    assert!((got[0] - 1.5).abs() < 0.1 && (got[1] + 0.5).abs() < 0.1);
}

#[test]
fn covariance_at_zero_lambda_is_inverse_information() {
    let data = smooth_curve_data(150, 16, 2);
    let cfg = config(Partition::uniform(0.0, 3.0, 3).unwrap(), vec![3], Smoothness::C1, WorkingCorrelation::Ar1, vec![0.0]);
    let (_, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let cov = covariance(&sm, &cmap, 0.0).unwrap();
    let sr = &sm.s * &cmap.rtilde;
    let info = sr.transpose() * sm.v.clone().try_inverse().unwrap() * &sr;
    let want = info.try_inverse().unwrap() / sm.n as f64;
    assert!((&cov - &want).amax() < 1e-8 * want.amax());
    assert!((&cov - cov.transpose()).amax() == 0.0);
    assert!(min_eigenvalue(&cov) > 0.0);
}

#[test]
fn gmm_reference_descends_and_reduces_to_block_fit() {
    let data = smooth_curve_data(200, 16, 3);
    let cfg = config(Partition::uniform(0.0, 3.0, 3).unwrap(), vec![3], Smoothness::C1, WorkingCorrelation::Ar1, vec![0.0]);
    let (blocks, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let src = BlockEvaluator { blocks: &blocks, models: fits.iter().map(|f| f.qif.clone()).collect() };
    let init = scm_one_step(&sm, &cmap, 1e-3).unwrap();
    let g = gmm_iterative(&src, &cmap, &sm, 1e-3, init.clone(), 1e-10, 50).unwrap();
    assert!(g.objective <= g.initial_objective);
    let v0 = sm.factor_v().unwrap();
    let (at_init, _) = gmm_objective(&src, &cmap, &v0, 1e-3, &init).unwrap();
    assert_eq!(at_init, g.initial_objective);

    // single block, no constraints: the block estimate is already a root
    let cfg1 = config(Partition::new(vec![0.0, 3.0]).unwrap(), vec![3], Smoothness::None, WorkingCorrelation::Ar1, vec![0.0]);
    let (blocks1, fits1, cmap1) = block_setup(&data, &cfg1);
    let m1: Vec<BlockMoments> = fits1.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm1 = stack(&m1, &cmap1.layout).unwrap();
    let src1 = BlockEvaluator { blocks: &blocks1, models: fits1.iter().map(|f| f.qif.clone()).collect() };
    let g1 = gmm_iterative(&src1, &cmap1, &sm1, 0.0, fits1[0].theta.clone(), 1e-10, 50).unwrap();
    assert!((&g1.theta_star - &fits1[0].theta).amax() < 1e-6);
}

#[test]
fn gcv_single_candidate_and_numerator_ordering() {
    // heterogeneous γ (sin curve over three blocks): a huge penalty shrinks γ to
    // zero and must fit the moments worse than no penalty
    let data = smooth_curve_data(200, 16, 5);
    let cfg = config(Partition::uniform(0.0, 3.0, 3).unwrap(), vec![3], Smoothness::C1, WorkingCorrelation::Ar1, vec![0.0]);
    let (blocks, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let src = BlockEvaluator { blocks: &blocks, models: fits.iter().map(|f| f.qif.clone()).collect() };
    let one = gcv(&[0.01], &sm, &cmap, &src, Schema::LambdaParallel).unwrap();
    assert_eq!(one.best.entry.lambda, 0.01);
    assert_eq!(one.table.len(), 1);
    let both = gcv(&[0.0, 1e6], &sm, &cmap, &src, Schema::BlockParallel).unwrap();
    assert!(both.table[0].numerator <= both.table[1].numerator);
    assert_eq!(both.best.entry.lambda, 0.0);
}

#[test]
fn constraints_hold_for_every_lambda() {
    let sc = Scenario { n: 300, ..Scenario::known_cubic(9) };
    let data = sc.generate(0).unwrap();
    let cfg = sc.pipeline_config().unwrap();
    let (blocks, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let _ = blocks;
    for lambda in [0.0, 1e-5, 1e-3, 1e-1, 10.0] {
        let theta = cmap.expand(&scm_one_step(&sm, &cmap, lambda).unwrap());
        let hg = &cmap.h * theta.rows(0, cmap.layout.gamma_dim());
        assert!(hg.amax() <= 1e-12 * theta.amax().max(1.0), "lambda {lambda}: {}", hg.amax());
    }
}

#[test]
fn one_step_estimate_is_a_local_optimum_of_the_moment_fit() {
    let sc = Scenario { n: 4000, ..Scenario::broken_stick(13) };
    let data = sc.generate(0).unwrap();
    let cfg = sc.pipeline_config().unwrap();
    let (blocks, fits, cmap) = block_setup(&data, &cfg);
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &cmap.layout).unwrap();
    let src = BlockEvaluator { blocks: &blocks, models: fits.iter().map(|f| f.qif.clone()).collect() };
    let hat = scm_one_step(&sm, &cmap, 0.0).unwrap();
    let at = evaluate_at(&src, &cmap, &hat, false).unwrap().quadratic_form().unwrap();
    for k in 0..hat.len() {
        for sign in [-1.0, 1.0] {
            let mut pert = hat.clone();
            pert[k] += sign * 0.05;
            let q = evaluate_at(&src, &cmap, &pert, false).unwrap().quadratic_form().unwrap();
            assert!(at < q, "coordinate {k}: {at} !< {q}");
        }
    }
}

#[test]
fn band_width_scales_like_inverse_root_n() {
    let widths: Vec<f64> = [250usize, 1000, 4000]
        .iter()
        .map(|&n| {
            let sc = Scenario { n, ..Scenario::broken_stick(17) };
            let cfg = sc.pipeline_config().unwrap();
            let w: Vec<f64> = (0..5)
                .map(|rep| {
                    let out = fit(&sc.generate(rep).unwrap(), &cfg).unwrap();
                    let c = out.curves.iter().find(|c| c.t == 5.0).unwrap();
                    c.upper - c.lower
                })
                .collect();
            median(w)
        })
        .collect();
    for pair in widths.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((ratio - 2.0).abs() < 0.3, "width ratio {ratio}");
    }
}

#[test]
fn homogeneous_parameter_setting_as_an_alternative_map() {
    // γ_j ≡ γ for every block: the γ part of R̃ stacks J copies of an identity
    let data = common::curve_data(300, 16, 21, |_| 1.5);
    let cfg = config(Partition::uniform(0.0, 3.0, 4).unwrap(), vec![1], Smoothness::None, WorkingCorrelation::Ar1, vec![0.0]);
    let (_, fits, free) = block_setup(&data, &cfg);
    let layout = free.layout.clone();
    let mut hom = Mat::zeros(layout.dim(), 2 + layout.p);
    for j in 0..layout.blocks {
        for d in 0..2 {
            hom[(layout.gamma_index(j, 0, d), d)] = 1.0;
        }
    }
    for k in 0..layout.p {
        hom[(layout.eta_index(k), 2 + k)] = 1.0;
    }
    let alt = scm_core::constraint::ConstraintMap { dtilde: hom.transpose() * &free.d * &hom, rtilde: hom.clone(), ..free.clone() };
    let m: Vec<BlockMoments> = fits.iter().map(|f| BlockMoments::from_fit(f).unwrap()).collect();
    let sm = stack(&m, &layout).unwrap();
    let th = alt.expand(&scm_one_step(&sm, &alt, 0.0).unwrap());
    for j in 1..layout.blocks {
        for d in 0..2 {
            assert_eq!(th[layout.gamma_index(j, 0, d)], th[layout.gamma_index(0, 0, d)]);
        }
    }
    assert!((th[layout.gamma_index(0, 0, 0)] - 1.5).abs() < 0.1, "{th}");
    assert!(th[layout.gamma_index(0, 0, 1)].abs() < 0.1, "{th}");
    assert!((th[layout.eta_index(0)] - 0.8).abs() < 0.05, "{th}");

    // pooling all blocks beats the free fit of a single block's intercept
    let var = |cm: &scm_core::constraint::ConstraintMap| {
        let c = &cm.rtilde * covariance(&sm, cm, 0.0).unwrap() * cm.rtilde.transpose();
        c[(layout.gamma_index(0, 0, 0), layout.gamma_index(0, 0, 0))]
    };
    assert!(var(&alt) < 0.5 * var(&free), "{} vs {}", var(&alt), var(&free));
}
