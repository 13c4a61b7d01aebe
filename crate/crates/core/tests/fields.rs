mod common;

use common::*;
use pgfield::fields::*;
use pgfield::gallery;
use pgfield::{sigmoid, sigmoid_prime};

#[test]
fn discounted_field_is_the_objective_gradient() {
    let mut worst = 0.0f64;
    for i in 0..500u64 {
        let e = gallery::random_mdp(2 + (i % 7) as usize, 1 + (i % 3) as usize, 7000 + i, 2.0, 0.05).unwrap();
        let theta = theta_from(i, e.policy.n_params(), 3.0);
        let gamma = [0.0, 0.3, 0.6, 0.9, 0.99, 1.0][(i % 6) as usize];
        let g = grad_discounted(&e.mdp, &e.policy, &theta, gamma).unwrap();
        let fd = fd_objective_gradient(&e.mdp, &e.policy, &theta, gamma, 1e-5);
        worst = worst.max(max_abs_diff(&g, &fd));
    }
    assert!(worst < 1e-6, "worst {worst:e}");
}

#[test]
fn figure1_discounted_gradient_closed_form() {
    let e = gallery::figure1();
    for gamma in [0.0, 0.5, 0.9] {
        for (t1, t2) in [(0.3, 0.7), (-1.0, 2.0)] {
            let theta = [t1, t2];
            let g = grad_discounted(&e.mdp, &e.policy, &theta, gamma).unwrap();
            let fd = fd_objective_gradient(&e.mdp, &e.policy, &theta, gamma, 1e-5);
            assert!(max_abs_diff(&g, &fd) < 1e-8);
            assert!((g[0] - gamma * sigmoid(t2) * sigmoid_prime(t1)).abs() < 1e-14);
            assert!((g[1] - gamma * sigmoid(t1) * sigmoid_prime(t2)).abs() < 1e-14);
        }
    }
}

#[test]
fn biased_field_two_constructions_agree() {
    let mut entries: Vec<_> = gallery::NAMES.iter().map(|n| gallery::by_name(n).unwrap()).collect();
    for i in 0..100u64 {
        entries.push(gallery::random_mdp(2 + (i % 7) as usize, 2 + (i % 2) as usize, 40 + i, 2.0, 0.05).unwrap());
    }
    let mut worst = 0.0f64;
    for (i, e) in entries.iter().enumerate() {
        for gamma in [0.0, 0.5, 0.9] {
            let theta = theta_from(i as u64 * 31, e.policy.n_params(), 3.0);
            let a = grad_biased(&e.mdp, &e.policy, &theta, gamma).unwrap();
            let b = grad_biased_via_lemma(&e.mdp, &e.policy, &theta, gamma).unwrap();
            worst = worst.max(max_abs_diff(&a, &b));
        }
    }
    assert!(worst < 1e-9, "worst {worst:e}");
}

#[test]
fn fields_coincide_at_gamma_one() {
    for i in 0..50u64 {
        let e = gallery::random_mdp(5, 3, i, 1.0, 0.1).unwrap();
        let theta = theta_from(i, e.policy.n_params(), 2.0);
        let d = grad_discounted(&e.mdp, &e.policy, &theta, 1.0).unwrap();
        let b = grad_biased(&e.mdp, &e.policy, &theta, 1.0).unwrap();
        let l = grad_biased_via_lemma(&e.mdp, &e.policy, &theta, 1.0).unwrap();
        let u = grad_undiscounted(&e.mdp, &e.policy, &theta).unwrap();
        assert!(max_abs_diff(&d, &b) < 1e-10);
        assert!(max_abs_diff(&d, &l) < 1e-10);
        assert!(max_abs_diff(&d, &u) < 1e-10);
    }
}

#[test]
fn occupancy_route_at_gamma_one_pairs_initial_with_value_gradient() {
    let e = gallery::random_mdp(5, 2, 8, 1.0, 0.1).unwrap();
    let theta = theta_from(8, e.policy.n_params(), 1.0);
    let dv = value_jacobian(&e.mdp, &e.policy, &theta, 1.0).unwrap();
    let want: Vec<f64> = (0..e.policy.n_params())
        .map(|k| (0..e.mdp.n_states()).map(|s| e.mdp.initial[s] * dv[(s, k)]).sum())
        .collect();
    let got = grad_biased_via_lemma(&e.mdp, &e.policy, &theta, 1.0).unwrap();
    assert!(max_abs_diff(&want, &got) < 1e-12);
}

#[test]
fn value_jacobian_matches_differences() {
    let e = gallery::random_mdp(6, 2, 17, 1.0, 0.1).unwrap();
    let theta = theta_from(17, e.policy.n_params(), 2.0);
    let gamma = 0.8;
    let dv = value_jacobian(&e.mdp, &e.policy, &theta, gamma).unwrap();
    let h = 1e-5;
    for k in 0..theta.len() {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[k] += h;
        dn[k] -= h;
        let vu = pgfield::solvers::solve_values(&e.mdp, &e.policy, &up, gamma).unwrap().v;
        let vd = pgfield::solvers::solve_values(&e.mdp, &e.policy, &dn, gamma).unwrap().v;
        for s in 0..e.mdp.n_states() {
            assert!(((vu[s] - vd[s]) / (2.0 * h) - dv[(s, k)]).abs() < 1e-8);
        }
    }
}

#[test]
fn biased_field_is_not_a_gradient_on_figure1() {
    let e = gallery::figure1();
    let theta = [0.3, 0.7];
    let gamma = 0.5;
    let b = grad_biased(&e.mdp, &e.policy, &theta, gamma).unwrap();
    let fd_discounted = fd_objective_gradient(&e.mdp, &e.policy, &theta, gamma, 1e-5);
    let fd_undiscounted = fd_objective_gradient(&e.mdp, &e.policy, &theta, 1.0, 1e-5);
    assert!(max_abs_diff(&b, &fd_discounted) > 1e-3);
    assert!(max_abs_diff(&b, &fd_undiscounted) > 1e-3);
}

#[test]
fn figure2_undiscounted_gradient_points_to_a2() {
    let e = gallery::figure2(4, 0.5).unwrap();
    let g = grad_undiscounted(&e.mdp, &e.policy, &[0.0]).unwrap();
    let fd = fd_objective_gradient(&e.mdp, &e.policy, &[0.0], 1.0, 1e-5);
    assert!(g[0] < 0.0);
    assert!((g[0] - fd[0]).abs() < 1e-8);
    // J = σ + 2(1 − σ) so dJ/dθ = −σ′
    assert!((g[0] + 0.25).abs() < 1e-14);
}

#[test]
fn figure2_biased_prefers_a1_when_discounting_hard() {
    let e = gallery::figure2(4, 0.5).unwrap();
    let probs_a2 = {
        let mut t = e.policy.probs(&[0.0]).unwrap();
        t[(0, 0)] = 0.0;
        t[(0, 1)] = 1.0;
        t
    };
    let a2_return = pgfield::solvers::objective_table(&e.mdp, &probs_a2, 0.5).unwrap();
    assert!((a2_return - 0.125).abs() < 1e-15);
    let g = grad_biased(&e.mdp, &e.policy, &[0.0], 0.5).unwrap();
    assert!(g[0] > 0.0);
    let j1 = pgfield::solvers::objective_table(&e.mdp, &probs_a2, 1.0).unwrap();
    assert_eq!(j1, 2.0);
}

#[test]
fn figure3_undiscounted_objective_by_enumeration() {
    let e = gallery::figure3();
    for theta in [-4.0, -1.0, 0.0, 0.5, 3.0] {
        let probs = e.policy.probs(&[theta]).unwrap();
        let j = objective(&e.mdp, &e.policy, &[theta], 1.0).unwrap();
        let oracle = enumerate_objective(&e.mdp, &probs, 1.0, 10);
        assert!((j - oracle).abs() < 1e-12);
        assert!((j - (2.0 + 99.0 * sigmoid(theta))).abs() < 1e-12);
    }
}

#[test]
fn figure3_biased_field_at_zero() {
    let e = gallery::figure3();
    let a = grad_biased(&e.mdp, &e.policy, &[0.0], 0.0).unwrap();
    let b = grad_biased_via_lemma(&e.mdp, &e.policy, &[0.0], 0.0).unwrap();
    assert!((a[0] + 0.25).abs() < 1e-15);
    assert!((b[0] + 0.25).abs() < 1e-15);
}

#[test]
fn figure1_objective_closed_form() {
    let e = gallery::figure1();
    for gamma in [0.0, 0.5, 1.0] {
        let j = objective(&e.mdp, &e.policy, &[0.3, -0.4], gamma).unwrap();
        assert!((j - gamma * sigmoid(0.3) * sigmoid(-0.4)).abs() < 1e-15);
    }
}

#[test]
fn dimension_errors_propagate() {
    let e = gallery::figure1();
    assert!(grad_biased(&e.mdp, &e.policy, &[0.0], 0.5).is_err());
    let other = gallery::figure3();
    assert!(grad_discounted(&other.mdp, &e.policy, &[0.0, 0.0], 0.5).is_err());
}
