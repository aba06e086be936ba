use scm_web::{coverage_study, simulate_and_fit, MAX_REPS};

#[test]
fn curve_view_carries_bands_and_truth() {
    let v = simulate_and_fit("broken-stick", 300, 1, &[]).unwrap();
    assert_eq!(v.edges, vec![-15.0, 0.0, 15.0]);
    assert_eq!(v.curve.len(), 31);
    for r in &v.curve {
        assert!(r.lower <= r.beta_hat && r.beta_hat <= r.upper);
        assert_eq!(r.truth, r.t.abs());
    }
    assert!(v.eta.is_empty() && v.eta_truth.is_none());
}

#[test]
fn gcv_profile_reports_every_candidate() {
    let grid = [1e-5, 1e-3, 1e-1];
    let v = simulate_and_fit("known-cubic", 200, 2, &grid).unwrap();
    let lambdas: Vec<f64> = v.gcv.iter().map(|e| e.lambda).collect();
    assert_eq!(lambdas, grid);
    assert!(grid.contains(&v.lambda));
    assert_eq!(v.eta.len(), 1);
}

#[test]
fn coverage_study_limits_and_output() {
    assert!(coverage_study("broken-stick", 200, 1, MAX_REPS + 1).is_err());
    assert!(simulate_and_fit("broken-stick", 0, 1, &[]).is_err());
    assert!(simulate_and_fit("nope", 100, 1, &[]).is_err());
    let r = coverage_study("broken-stick", 200, 3, 4).unwrap();
    assert_eq!(r.reps, 4);
    assert_eq!(r.curve.times.len(), r.curve.cp.len());
}
