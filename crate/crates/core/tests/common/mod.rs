//! Reference computations that avoid the crate's linear-solve paths.
#![allow(dead_code)]

use pgfield::fields::objective;
use pgfield::policy::PolicyTable;
use pgfield::{Policy, TabularMdp};

/// Central-difference gradient of `J_γ`.
pub fn fd_objective_gradient(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            let ju = objective(mdp, policy, &up, gamma).unwrap();
            let jd = objective(mdp, policy, &dn, gamma).unwrap();
            (ju - jd) / (2.0 * h)
        })
        .collect()
}

/// Forward propagation of the state distribution, `Pr(S_t = s)` for
/// `t = 0..` until the transient mass falls under `tol`.
pub fn distribution_rows(mdp: &TabularMdp, probs: &PolicyTable, tol: f64, max_t: usize) -> Vec<Vec<f64>> {
    let ns = mdp.n_states();
    let mut rows = vec![mdp.initial.clone()];
    loop {
        let cur = rows.last().unwrap();
        let transient: f64 = (0..ns).filter(|&s| s != mdp.terminal).map(|s| cur[s]).sum();
        if transient < tol || rows.len() > max_t {
            break;
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if cur[s] == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let w = cur[s] * probs[(s, a)];
                for (j, nx) in next.iter_mut().enumerate() {
                    *nx += w * mdp.p(s, a, j);
                }
            }
        }
        rows.push(next);
    }
    rows
}

/// `Σ_t β^t Pr(S_t = s)` by brute-force summation.
pub fn series_visitation(mdp: &TabularMdp, probs: &PolicyTable, beta: f64) -> Vec<f64> {
    let rows = distribution_rows(mdp, probs, 1e-16, 1_000_000);
    let mut out = vec![0.0; mdp.n_states()];
    let mut w = 1.0;
    for row in &rows {
        for (o, x) in out.iter_mut().zip(row) {
            *o += w * x;
        }
        w *= beta;
    }
    out[mdp.terminal] = 0.0;
    out
}

/// `J_γ` as `Σ_t γ^t E[R_t]` by forward propagation.
pub fn series_objective(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64) -> f64 {
    let x = series_visitation(mdp, probs, gamma);
    (0..mdp.n_states())
        .filter(|&s| s != mdp.terminal)
        .map(|s| x[s] * (0..mdp.n_actions()).map(|a| probs[(s, a)] * mdp.r(s, a)).sum::<f64>())
        .sum()
}

/// Expected discounted return from `state` by recursive enumeration of every
/// action/transition branch. Only for short acyclic MDPs.
pub fn enumerate_return(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64, state: usize, depth: usize) -> f64 {
    if state == mdp.terminal || depth == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..mdp.n_actions() {
        let pa = probs[(state, a)];
        if pa == 0.0 {
            continue;
        }
        let mut cont = 0.0;
        for next in 0..mdp.n_states() {
            let p = mdp.p(state, a, next);
            if p > 0.0 {
                cont += p * enumerate_return(mdp, probs, gamma, next, depth - 1);
            }
        }
        total += pa * (mdp.r(state, a) + gamma * cont);
    }
    total
}

pub fn enumerate_objective(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64, depth: usize) -> f64 {
    (0..mdp.n_states())
        .filter(|&s| mdp.initial[s] > 0.0)
        .map(|s| mdp.initial[s] * enumerate_return(mdp, probs, gamma, s, depth))
        .sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Deterministic pseudo-random θ in `[-r, r]` without pulling in an RNG.
pub fn theta_from(seed: u64, n: usize, r: f64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let u = (x >> 11) as f64 / (1u64 << 53) as f64;
            r * (2.0 * u - 1.0)
        })
        .collect()
}
