//! Episode simulation and Monte Carlo policy-gradient estimators.
//!
//! Each episode draws from its own ChaCha stream (`seed`, stream = episode
//! index), so a batch is identical regardless of how many workers produce it
//! and aggregation runs in episode order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{Policy, PolicyTable};
use crate::solvers;

/// Horizon cap as a multiple of the worst-case expected episode length.
pub const HORIZON_CAP_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub episode: u64,
    pub steps: Vec<Step>,
    /// Horizon cap reached before absorption.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub theta: Vec<f64>,
    pub horizon_cap: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn truncated(&self) -> usize {
        self.trajectories.iter().filter(|t| t.truncated).count()
    }

    /// Fraction of episodes in each state at time `t`, for `t = 0..=horizon`.
    /// Ended episodes count toward the terminal state.
    pub fn state_frequencies(&self, mdp: &TabularMdp, horizon: usize) -> Vec<Vec<f64>> {
        let n = self.trajectories.len() as f64;
        let mut freq = vec![vec![0.0; mdp.n_states()]; horizon + 1];
        for traj in &self.trajectories {
            for (t, row) in freq.iter_mut().enumerate() {
                let s = traj.steps.get(t).map_or(mdp.terminal, |st| st.state);
                row[s] += 1.0;
            }
        }
        for row in &mut freq {
            for x in row.iter_mut() {
                *x /= n;
            }
        }
        freq
    }

    /// One JSON object per episode, states and actions by name.
    pub fn write_jsonl(&self, mdp: &TabularMdp, mut out: impl Write) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct NamedStep<'a> {
            s: &'a str,
            a: &'a str,
            r: f64,
        }
        #[derive(Serialize)]
        struct Line<'a> {
            episode: u64,
            seed: u64,
            truncated: bool,
            steps: Vec<NamedStep<'a>>,
        }
        for traj in &self.trajectories {
            let line = Line {
                episode: traj.episode,
                seed: self.seed,
                truncated: traj.truncated,
                steps: traj
                    .steps
                    .iter()
                    .map(|st| NamedStep {
                        s: &mdp.states[st.state],
                        a: &mdp.actions[st.action],
                        r: st.reward,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulateOptions {
    /// Override for the horizon cap; default from the expected episode length.
    pub horizon_cap: Option<usize>,
    /// Worker threads; `0` or `1` runs on the caller's thread.
    pub jobs: usize,
}

pub fn simulate(
    mdp: &TabularMdp,
    policy: &Policy,
    theta: &[f64],
    n_episodes: usize,
    seed: u64,
    opts: SimulateOptions,
) -> Result<TrajectoryBatch> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    let horizon_cap = match opts.horizon_cap {
        Some(0) => return Err(Error::InvalidArgument("horizon cap must be >= 1".into())),
        Some(cap) => cap,
        None => default_horizon_cap(mdp, &probs)?,
    };
    let run = |i: usize| episode(mdp, &probs, seed, i as u64, horizon_cap);
    let trajectories: Vec<Trajectory> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| (0..n_episodes).into_par_iter().map(run).collect())
    } else {
        (0..n_episodes).map(run).collect()
    };
    Ok(TrajectoryBatch {
        seed,
        theta: theta.to_vec(),
        horizon_cap,
        trajectories,
    })
}

fn default_horizon_cap(mdp: &TabularMdp, probs: &PolicyTable) -> Result<usize> {
    let steps = solvers::expected_absorption_steps(mdp, probs)?;
    let worst = steps.iter().copied().fold(1.0, f64::max);
    Ok((HORIZON_CAP_FACTOR * worst).ceil() as usize)
}

fn draw(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn episode(mdp: &TabularMdp, probs: &PolicyTable, seed: u64, index: u64, cap: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut state = draw(&mut rng, mdp.initial.iter().copied());
    let mut steps = Vec::new();
    while state != mdp.terminal && steps.len() < cap {
        let action = draw(&mut rng, (0..mdp.n_actions()).map(|a| probs[(state, a)]));
        let reward = mdp.r(state, action);
        let next = draw(&mut rng, mdp.row(state, action).iter().copied());
        steps.push(Step { state, action, reward });
        state = next;
    }
    Trajectory {
        episode: index,
        truncated: state != mdp.terminal,
        steps,
    }
}

// ---------------------------------------------------------------------------
// Estimators

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `Σ_t γ^t ψ(S_t, A_t) G_t`, unbiased for the discounted gradient.
    Weighted,
    /// `Σ_t ψ(S_t, A_t) G_t`, unbiased for the biased update.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub estimator: Estimator,
    pub gamma: f64,
    pub seed: u64,
    pub episodes: usize,
    pub truncated: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation over episodes divided by `√N`.
    pub std_error: Vec<f64>,
}

impl EstimatorReport {
    /// `|mean − target| / SE` per component (infinite when SE = 0 and they differ).
    pub fn z_scores(&self, target: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std_error)
            .zip(target)
            .map(|((m, se), t)| {
                let diff = (m - t).abs();
                if diff == 0.0 {
                    0.0
                } else {
                    diff / se
                }
            })
            .collect()
    }
}

pub fn mc_gradient(
    batch: &TrajectoryBatch,
    policy: &Policy,
    theta: &[f64],
    gamma: f64,
    estimator: Estimator,
) -> Result<EstimatorReport> {
    if batch.theta.len() != theta.len() || batch.theta.iter().zip(theta).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::ThetaMismatch);
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} outside [0, 1]")));
    }
    let psi = policy.features(theta)?;
    let np = policy.n_params();
    let n = batch.trajectories.len();

    let per_episode: Vec<Vec<f64>> = batch
        .trajectories
        .iter()
        .map(|traj| {
            let mut est = vec![0.0; np];
            let mut ret = 0.0;
            for (t, step) in traj.steps.iter().enumerate().rev() {
                ret = step.reward + gamma * ret;
                let w = match estimator {
                    Estimator::Weighted => gamma.powi(t as i32),
                    Estimator::Unweighted => 1.0,
                };
                let c = w * ret;
                if c != 0.0 {
                    for (e, p) in est.iter_mut().zip(psi.get(step.state, step.action)) {
                        *e += c * p;
                    }
                }
            }
            est
        })
        .collect();

    let mut mean = vec![0.0; np];
    for e in &per_episode {
        for (m, x) in mean.iter_mut().zip(e) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    let mut var = vec![0.0; np];
    for e in &per_episode {
        for ((v, x), m) in var.iter_mut().zip(e).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std_error = var
        .iter()
        .map(|v| if n > 1 { (v / (n - 1) as f64 / n as f64).sqrt() } else { f64::INFINITY })
        .collect();

    Ok(EstimatorReport {
        estimator,
        gamma,
        seed: batch.seed,
        episodes: n,
        truncated: batch.truncated(),
        mean,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::policy::PolicyKind;

    #[test]
    fn deterministic_chain_repeats() {
        let mut m = TabularMdp::skeleton(&["s1", "s2", "s3", "sInf"], &["a"], "sInf", 1.0).unwrap();
        m.set_deterministic(0, 0, 1, 1.0);
        m.set_deterministic(1, 0, 2, 2.0);
        let p = Policy::from_slots(PolicyKind::TabularSoftmax, 4, 1, vec![None; 4]).unwrap();
        let batch = simulate(&m, &p, &[], 50, 3, SimulateOptions::default()).unwrap();
        let first = &batch.trajectories[0].steps;
        assert_eq!(first.len(), 3);
        assert!(batch.trajectories.iter().all(|t| &t.steps == first));
    }

    #[test]
    fn same_seed_same_batch_any_jobs() {
        let e = gallery::random_mdp(5, 2, 9, 1.0, 0.2).unwrap();
        let theta = vec![0.1; e.policy.n_params()];
        let a = simulate(&e.mdp, &e.policy, &theta, 500, 77, SimulateOptions::default()).unwrap();
        let b = simulate(&e.mdp, &e.policy, &theta, 500, 77, SimulateOptions { jobs: 4, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let c = simulate(&e.mdp, &e.policy, &theta, 500, 78, SimulateOptions::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cap_hit_is_flagged() {
        let e = gallery::random_mdp(4, 2, 1, 1.0, 0.01).unwrap();
        let theta = vec![0.0; e.policy.n_params()];
        let batch = simulate(&e.mdp, &e.policy, &theta, 200, 1, SimulateOptions { horizon_cap: Some(1), jobs: 1 }).unwrap();
        assert!(batch.truncated() > 0);
        assert!(batch.trajectories.iter().all(|t| t.len() <= 1));
    }

    #[test]
    fn figure1_episodes_are_short() {
        let e = gallery::figure1();
        let batch = simulate(&e.mdp, &e.policy, &[0.5, -0.5], 2000, 5, SimulateOptions::default()).unwrap();
        assert!(batch.trajectories.iter().all(|t| t.len() <= 2 && !t.truncated));
    }

    #[test]
    fn zero_reward_mean_is_exactly_zero() {
        let mut e = gallery::figure1();
        e.mdp.reward.fill(0.0);
        let theta = [0.3, 0.7];
        let batch = simulate(&e.mdp, &e.policy, &theta, 1000, 2, SimulateOptions::default()).unwrap();
        for est in [Estimator::Weighted, Estimator::Unweighted] {
            let r = mc_gradient(&batch, &e.policy, &theta, 0.5, est).unwrap();
            assert_eq!(r.mean, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn theta_mismatch_rejected() {
        let e = gallery::figure1();
        let batch = simulate(&e.mdp, &e.policy, &[0.3, 0.7], 10, 2, SimulateOptions::default()).unwrap();
        assert!(matches!(
            mc_gradient(&batch, &e.policy, &[0.3, 0.71], 0.5, Estimator::Weighted),
            Err(Error::ThetaMismatch)
        ));
    }

    #[test]
    fn jsonl_has_one_line_per_episode() {
        let e = gallery::figure1();
        let batch = simulate(&e.mdp, &e.policy, &[0.0, 0.0], 7, 2, SimulateOptions::default()).unwrap();
        let mut buf = Vec::new();
        batch.write_jsonl(&e.mdp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["seed"], 2);
        }
    }
}
