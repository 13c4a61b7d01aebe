mod common;

use common::*;
use pgfield::fields::{grad_biased, grad_discounted};
use pgfield::gallery;
use pgfield::sampling::*;
use pgfield::sigmoid;
use pgfield::solvers::visitation_series;

fn parallel() -> SimulateOptions {
    SimulateOptions {
        jobs: 4,
        ..SimulateOptions::default()
    }
}

#[test]
fn estimators_are_unbiased_for_their_targets() {
    for i in 0..20u64 {
        let e = gallery::random_mdp(3 + (i % 4) as usize, 2, 5000 + i, 1.0, 0.25).unwrap();
        let theta = theta_from(i, e.policy.n_params(), 1.0);
        let gamma = [0.5, 0.8, 0.9][(i % 3) as usize];
        let batch = simulate(&e.mdp, &e.policy, &theta, 100_000, 1000 + i, parallel()).unwrap();
        assert_eq!(batch.truncated(), 0);
        let w = mc_gradient(&batch, &e.policy, &theta, gamma, Estimator::Weighted).unwrap();
        let u = mc_gradient(&batch, &e.policy, &theta, gamma, Estimator::Unweighted).unwrap();
        let gd = grad_discounted(&e.mdp, &e.policy, &theta, gamma).unwrap();
        let gb = grad_biased(&e.mdp, &e.policy, &theta, gamma).unwrap();
        for z in w.z_scores(&gd) {
            assert!(z < 4.0, "instance {i}: weighted z = {z}");
        }
        for z in u.z_scores(&gb) {
            assert!(z < 4.0, "instance {i}: unweighted z = {z}");
        }
    }
}

#[test]
fn figure1_estimators_separate() {
    let e = gallery::figure1();
    let theta = [0.3, 0.7];
    let gamma = 0.5;
    let batch = simulate(&e.mdp, &e.policy, &theta, 200_000, 7, parallel()).unwrap();
    let w = mc_gradient(&batch, &e.policy, &theta, gamma, Estimator::Weighted).unwrap();
    let u = mc_gradient(&batch, &e.policy, &theta, gamma, Estimator::Unweighted).unwrap();
    let gd = grad_discounted(&e.mdp, &e.policy, &theta, gamma).unwrap();
    let gb = grad_biased(&e.mdp, &e.policy, &theta, gamma).unwrap();
    assert!(w.z_scores(&gd).iter().all(|&z| z < 3.0));
    assert!(u.z_scores(&gb).iter().all(|&z| z < 3.0));
    assert!(u.z_scores(&gd)[1] > 5.0);
}

#[test]
fn empirical_distribution_matches_visitation() {
    for i in 0..5u64 {
        let e = gallery::random_mdp(5, 2, 8000 + i, 1.0, 0.2).unwrap();
        let theta = theta_from(i, e.policy.n_params(), 1.5);
        let n = 100_000;
        let batch = simulate(&e.mdp, &e.policy, &theta, n, 42 + i, parallel()).unwrap();
        let horizon = 8;
        let exact = visitation_series(&e.mdp, &e.policy, &theta, horizon).unwrap();
        let freq = batch.state_frequencies(&e.mdp, horizon);
        for t in 0..=horizon {
            for s in 0..e.mdp.n_states() {
                let p = exact.rows[t][s];
                let se = (p * (1.0 - p) / n as f64).sqrt();
                let diff = (freq[t][s] - p).abs();
                if se == 0.0 {
                    assert!(diff < 1e-12);
                } else {
                    assert!(diff < 4.0 * se, "t {t} s {s}: {} vs {p}", freq[t][s]);
                }
            }
        }
    }
}

#[test]
fn figure1_reach_fraction() {
    let e = gallery::figure1();
    let n = 100_000;
    let batch = simulate(&e.mdp, &e.policy, &[0.0, 0.0], n, 11, SimulateOptions::default()).unwrap();
    let reached = batch.trajectories.iter().filter(|t| t.steps.iter().any(|s| s.state == 1)).count();
    let frac = reached as f64 / n as f64;
    let p = sigmoid(0.0);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((frac - p).abs() < 3.0 * se);
    assert!(batch.trajectories.iter().all(|t| t.len() <= 3));
}

#[test]
fn seeds_and_workers_reproduce() {
    let e = gallery::random_mdp(6, 3, 1, 1.0, 0.1).unwrap();
    let theta = theta_from(1, e.policy.n_params(), 1.0);
    let a = simulate(&e.mdp, &e.policy, &theta, 5_000, 123, SimulateOptions::default()).unwrap();
    let b = simulate(&e.mdp, &e.policy, &theta, 5_000, 123, SimulateOptions::default()).unwrap();
    let c = simulate(&e.mdp, &e.policy, &theta, 5_000, 123, parallel()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    let ra = mc_gradient(&a, &e.policy, &theta, 0.9, Estimator::Weighted).unwrap();
    let rc = mc_gradient(&c, &e.policy, &theta, 0.9, Estimator::Weighted).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rc).unwrap());
    let d = simulate(&e.mdp, &e.policy, &theta, 5_000, 124, SimulateOptions::default()).unwrap();
    assert_ne!(a, d);
}

#[test]
fn zero_rewards_give_zero_estimates() {
    let mut e = gallery::random_mdp(4, 2, 3, 1.0, 0.2).unwrap();
    e.mdp.reward.fill(0.0);
    let theta = theta_from(3, e.policy.n_params(), 1.0);
    let batch = simulate(&e.mdp, &e.policy, &theta, 1_000, 5, SimulateOptions::default()).unwrap();
    for est in [Estimator::Weighted, Estimator::Unweighted] {
        let r = mc_gradient(&batch, &e.policy, &theta, 0.9, est).unwrap();
        assert!(r.mean.iter().all(|&m| m == 0.0));
    }
}

#[test]
fn mismatched_theta_is_rejected() {
    let e = gallery::figure1();
    let batch = simulate(&e.mdp, &e.policy, &[0.3, 0.7], 10, 1, SimulateOptions::default()).unwrap();
    let err = mc_gradient(&batch, &e.policy, &[0.3, 0.70000001], 0.5, Estimator::Weighted).unwrap_err();
    assert!(matches!(err, pgfield::Error::ThetaMismatch));
}

#[test]
fn tight_cap_flags_truncation() {
    let e = gallery::figure2(4, 0.5).unwrap();
    let opts = SimulateOptions {
        horizon_cap: Some(2),
        jobs: 1,
    };
    let batch = simulate(&e.mdp, &e.policy, &[0.0], 1_000, 9, opts).unwrap();
    assert!(batch.truncated() > 0);
    assert!(batch.trajectories.iter().all(|t| t.len() <= 2));
}

#[test]
fn jsonl_export_has_one_line_per_episode() {
    let e = gallery::figure1();
    let batch = simulate(&e.mdp, &e.policy, &[0.0, 0.0], 25, 2, SimulateOptions::default()).unwrap();
    let mut buf = Vec::new();
    batch.write_jsonl(&e.mdp, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 25);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["seed"], 2);
        assert_eq!(v["steps"][0]["s"], "s1");
    }
}
