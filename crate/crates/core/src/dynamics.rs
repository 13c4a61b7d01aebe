//! Fixed-step ascent along a parameter field and scoring of where it ends up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ParameterField, VectorField};
use crate::mdp::TabularMdp;
use crate::policy::{Policy, PolicyKind, PolicyTable};
use crate::solvers;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop when `‖F(θ)‖∞` drops below this.
    pub tol_grad: f64,
    /// Stop when `‖θ_k − θ_{k−window}‖∞` drops below this.
    pub tol_step: f64,
    pub drift_window: usize,
    /// Policy counts as deterministic once every parameterised state puts
    /// at least `1 − saturation` on one action.
    pub saturation: f64,
    pub divergence_bound: f64,
    /// Keep every `decimation`-th iterate in the trajectory.
    pub decimation: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_iters: 200_000,
            tol_grad: 1e-8,
            tol_step: 1e-12,
            drift_window: 100,
            saturation: 1e-3,
            divergence_bound: 1e6,
            decimation: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientNorm,
    Saturated,
    Stalled,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPoint {
    pub iter: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowResult {
    pub field: String,
    pub options: FlowOptions,
    pub trajectory: Vec<FlowPoint>,
    pub final_theta: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    pub converged: bool,
    pub diverged: bool,
    /// `π(s, a)` at the final θ, one row per state.
    pub terminal_policy: Vec<Vec<f64>>,
    pub scores: PolicyScores,
}

/// Explicit ascent `θ ← θ + α F(θ)`.
pub fn flow(field: &ParameterField, theta0: &[f64], opts: &FlowOptions) -> Result<FlowResult> {
    if !(opts.step_size > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be > 0, got {}", opts.step_size)));
    }
    let n = field.dim();
    if theta0.len() != n {
        return Err(Error::dim("theta0", n, theta0.len()));
    }
    let decimation = opts.decimation.max(1);
    let window = opts.drift_window.max(1);
    let param_states = field.policy.parameterized_states();

    let mut theta = theta0.to_vec();
    let mut trajectory = vec![FlowPoint {
        iter: 0,
        theta: theta.clone(),
    }];
    let mut history: std::collections::VecDeque<Vec<f64>> = std::collections::VecDeque::with_capacity(window + 1);
    history.push_back(theta.clone());
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let grad = field.eval(&theta)?;
        if grad.iter().any(|g| !g.is_finite()) {
            stop = StopReason::Diverged;
            break;
        }
        if max_abs(&grad) < opts.tol_grad {
            stop = StopReason::GradientNorm;
            break;
        }
        let next: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + opts.step_size * g).collect();
        if saturated_and_holding(&field.policy, &param_states, &theta, &next, opts.saturation)? {
            stop = StopReason::Saturated;
            break;
        }
        theta = next;
        iterations += 1;
        if iterations % decimation == 0 {
            trajectory.push(FlowPoint {
                iter: iterations,
                theta: theta.clone(),
            });
        }
        if max_abs(&theta) > opts.divergence_bound || theta.iter().any(|t| !t.is_finite()) {
            stop = StopReason::Diverged;
            break;
        }
        history.push_back(theta.clone());
        if history.len() > window {
            let old = history.pop_front().expect("non-empty");
            let drift = old.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if drift < opts.tol_step {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    if trajectory.last().map(|p| p.iter) != Some(iterations) {
        trajectory.push(FlowPoint {
            iter: iterations,
            theta: theta.clone(),
        });
    }

    let diverged = stop == StopReason::Diverged;
    let (terminal_policy, scores) = if diverged && theta.iter().any(|t| !t.is_finite()) {
        (Vec::new(), PolicyScores::unavailable(field.gamma))
    } else {
        let probs = field.policy.probs(&theta)?;
        (
            table_rows(&probs),
            score_policy(&field.mdp, &field.policy, &theta, field.gamma, DEFAULT_ENVELOPE_BUDGET)?,
        )
    };

    Ok(FlowResult {
        field: field.label(),
        options: *opts,
        trajectory,
        final_theta: theta,
        iterations,
        converged: matches!(stop, StopReason::GradientNorm | StopReason::Saturated | StopReason::Stalled),
        diverged,
        stop,
        terminal_policy,
        scores,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn table_rows(probs: &PolicyTable) -> Vec<Vec<f64>> {
    probs.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Every parameterised state is within `tol` of deterministic, and the
/// pending step does not move any of them back toward the interior.
fn saturated_and_holding(policy: &Policy, states: &[usize], theta: &[f64], next: &[f64], tol: f64) -> Result<bool> {
    if states.is_empty() {
        return Ok(false);
    }
    let now = policy.probs(theta)?;
    let after = policy.probs(next)?;
    let top = |t: &PolicyTable, s: usize| {
        (0..t.ncols()).fold((0, f64::NEG_INFINITY), |best, a| if t[(s, a)] > best.1 { (a, t[(s, a)]) } else { best })
    };
    Ok(states.iter().all(|&s| {
        let (a_now, p_now) = top(&now, s);
        let p_after = after[(s, a_now)];
        p_now >= 1.0 - tol && p_after >= p_now
    }))
}

// ---------------------------------------------------------------------------
// Scoring

/// Above this many deterministic policies the envelope is skipped.
pub const DEFAULT_ENVELOPE_BUDGET: usize = 1 << 20;

pub const MAX_ENVELOPE_STATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub j_gamma_min: f64,
    pub j_gamma_max: f64,
    pub j_min: f64,
    pub j_max: f64,
    pub policies: usize,
    /// Deterministic policies that never terminate, left out of the `J` range.
    pub non_episodic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterministicScore {
    /// Chosen action per parameterised state, by name.
    pub actions: Vec<(String, String)>,
    pub j_gamma: f64,
    pub j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyScores {
    pub gamma: f64,
    pub j_gamma: f64,
    pub j: f64,
    /// Objectives of the deterministic policy the current one rounds to.
    pub rounded: Option<DeterministicScore>,
    pub envelope: Option<Envelope>,
    pub notice: Option<String>,
}

impl PolicyScores {
    fn unavailable(gamma: f64) -> Self {
        Self {
            gamma,
            j_gamma: f64::NAN,
            j: f64::NAN,
            rounded: None,
            envelope: None,
            notice: Some("parameters diverged; no scores".into()),
        }
    }

    /// `J_γ` and `J` both sit at their envelope minimum within `tol`.
    pub fn pessimal_under_both(&self, tol: f64) -> Option<bool> {
        let env = self.envelope.as_ref()?;
        Some((self.j_gamma - env.j_gamma_min).abs() <= tol && (self.j - env.j_min).abs() <= tol)
    }
}

/// Per-state choice sets for deterministic policies the parameterisation can
/// approach. `None` when the structure is not one we can enumerate.
enum Choices {
    /// Sign of each parameter: `+` selects a1 in every state tied to it.
    Signs { n_params: usize },
    /// Independent action per parameterised state.
    PerState { states: Vec<(usize, Vec<Vec<usize>>)> },
}

fn choice_structure(policy: &Policy) -> Option<Choices> {
    let states = policy.parameterized_states();
    let na = policy.n_actions();
    let sigmoid_shaped = na == 2
        && states
            .iter()
            .all(|&s| policy.slot(s, 0).is_some() && policy.slot(s, 1).is_none());
    if sigmoid_shaped {
        return Some(Choices::Signs {
            n_params: policy.n_params(),
        });
    }
    if matches!(policy.kind(), PolicyKind::Tied | PolicyKind::TabularSigmoid) {
        return None;
    }
    // untied: no parameter may appear in two states, or twice in one state
    let mut owner = vec![None; policy.n_params()];
    for &s in &states {
        for a in 0..na {
            if let Some(k) = policy.slot(s, a) {
                if owner[k].is_some() {
                    return None;
                }
                owner[k] = Some(s);
            }
        }
    }
    let per_state = states
        .iter()
        .map(|&s| {
            let mut opts: Vec<Vec<usize>> = (0..na).filter(|&a| policy.slot(s, a).is_some()).map(|a| vec![a]).collect();
            let free: Vec<usize> = (0..na).filter(|&a| policy.slot(s, a).is_none()).collect();
            if !free.is_empty() {
                opts.push(free);
            }
            (s, opts)
        })
        .collect();
    Some(Choices::PerState { states: per_state })
}

/// Exact `J_γ` and `J` at θ, the deterministic policy θ rounds to, and the
/// range of both objectives over every deterministic policy the
/// parameterisation can represent.
pub fn score_policy(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64, budget: usize) -> Result<PolicyScores> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    let j_gamma = solvers::objective_table(mdp, &probs, gamma)?;
    let j = solvers::objective_table(mdp, &probs, 1.0)?;
    let states = policy.parameterized_states();

    let rounded = {
        let mut table = probs.clone();
        let mut actions = Vec::new();
        for &s in &states {
            let best = (0..mdp.n_actions())
                .fold(0, |b, a| if probs[(s, a)] > probs[(s, b)] { a } else { b });
            set_deterministic(&mut table, s, &[best]);
            actions.push((mdp.states[s].clone(), mdp.actions[best].clone()));
        }
        Some(DeterministicScore {
            actions,
            j_gamma: solvers::objective_table(mdp, &table, gamma)?,
            j: solvers::objective_table(mdp, &table, 1.0).ok(),
        })
    };

    let mut notice = None;
    let envelope = if states.len() > MAX_ENVELOPE_STATES {
        notice = Some(format!(
            "envelope skipped: {} parameterised states exceeds {MAX_ENVELOPE_STATES}",
            states.len()
        ));
        None
    } else {
        match choice_structure(policy) {
            None => {
                notice = Some("envelope skipped: parameter tying pattern not enumerable".into());
                None
            }
            Some(choices) => match enumerate(mdp, policy, &probs, &choices, gamma, budget)? {
                Ok(env) => Some(env),
                Err(msg) => {
                    notice = Some(msg);
                    None
                }
            },
        }
    };

    Ok(PolicyScores {
        gamma,
        j_gamma,
        j,
        rounded,
        envelope,
        notice,
    })
}

fn set_deterministic(table: &mut PolicyTable, s: usize, actions: &[usize]) {
    for a in 0..table.ncols() {
        table[(s, a)] = 0.0;
    }
    let w = 1.0 / actions.len() as f64;
    for &a in actions {
        table[(s, a)] = w;
    }
}

type Enumerated = std::result::Result<Envelope, String>;

fn enumerate(
    mdp: &TabularMdp,
    policy: &Policy,
    base: &PolicyTable,
    choices: &Choices,
    gamma: f64,
    budget: usize,
) -> Result<Enumerated> {
    let radices: Vec<usize> = match choices {
        Choices::Signs { n_params } => vec![2; *n_params],
        Choices::PerState { states } => states.iter().map(|(_, o)| o.len()).collect(),
    };
    let mut total: usize = 1;
    for &r in &radices {
        total = match total.checked_mul(r) {
            Some(t) if t <= budget => t,
            _ => return Ok(Err(format!("envelope skipped: more than {budget} deterministic policies"))),
        };
    }

    let mut env = Envelope {
        j_gamma_min: f64::INFINITY,
        j_gamma_max: f64::NEG_INFINITY,
        j_min: f64::INFINITY,
        j_max: f64::NEG_INFINITY,
        policies: total,
        non_episodic: 0,
    };
    let mut digits = vec![0usize; radices.len()];
    let states = policy.parameterized_states();
    for _ in 0..total {
        let mut table = base.clone();
        match choices {
            Choices::Signs { .. } => {
                for &s in &states {
                    let k = policy.slot(s, 0).expect("sigmoid-shaped");
                    let a = if digits[k] == 0 { 0 } else { 1 };
                    set_deterministic(&mut table, s, &[a]);
                }
            }
            Choices::PerState { states } => {
                for ((s, opts), &d) in states.iter().zip(&digits) {
                    set_deterministic(&mut table, *s, &opts[d]);
                }
            }
        }
        match solvers::objective_table(mdp, &table, gamma) {
            Ok(jg) => {
                env.j_gamma_min = env.j_gamma_min.min(jg);
                env.j_gamma_max = env.j_gamma_max.max(jg);
            }
            Err(Error::Singular(_)) => {}
            Err(e) => return Err(e),
        }
        match solvers::objective_table(mdp, &table, 1.0) {
            Ok(j) => {
                env.j_min = env.j_min.min(j);
                env.j_max = env.j_max.max(j);
            }
            Err(Error::Singular(_)) => env.non_episodic += 1,
            Err(e) => return Err(e),
        }
        // odometer increment
        for (d, &r) in digits.iter_mut().zip(&radices) {
            *d += 1;
            if *d < r {
                break;
            }
            *d = 0;
        }
    }
    Ok(Ok(env))
}
