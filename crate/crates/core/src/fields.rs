//! The parameter-space vector fields: the discounted gradient, the biased
//! update that drops `γ^t`, and the undiscounted gradient.
//!
//! All three share one shape, `Σ_s x(s) Σ_a ∂π(s,a)/∂θ · Q_γ(s,a)`, and
//! differ only in the state weighting `x`:
//!
//! | field               | weighting `x(s)`                |
//! |---------------------|---------------------------------|
//! | `grad_discounted`   | `Σ_t γ^t Pr(S_t = s)`           |
//! | `grad_biased`       | `Σ_t Pr(S_t = s)`               |
//! | `grad_undiscounted` | `Σ_t Pr(S_t = s)` with `γ = 1`  |
//!
//! The biased field has a second, independent construction
//! ([`grad_biased_via_lemma`]) that pairs the weighted occupancy measure with
//! the exact derivative of `V_γ`; the two must agree to round-off.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{CompatibleFeatures, Policy, PolicyTable};
use crate::solvers::{self, TransientChain, ValueBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    GradDiscounted,
    GradBiased,
    /// Same field as `GradBiased`, built through the occupancy measure.
    GradBiasedViaLemma,
    GradUndiscounted,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::GradDiscounted,
        FieldKind::GradBiased,
        FieldKind::GradBiasedViaLemma,
        FieldKind::GradUndiscounted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::GradDiscounted => "grad_discounted",
            FieldKind::GradBiased => "grad_biased",
            FieldKind::GradBiasedViaLemma => "grad_biased_via_lemma",
            FieldKind::GradUndiscounted => "grad_undiscounted",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the per-action signal is `Q` or the advantage `Q − V`. The two
/// give identical fields because `Σ_a π(s,a) ψ(s,a) = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldForm {
    #[default]
    Q,
    Advantage,
}

/// Anything that maps θ to a vector of the same dimension.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Exact Jacobian `J[i][j] = ∂F_i/∂θ_j`, when the field knows it.
    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }

    fn label(&self) -> String;
}

/// A named field bound to an (MDP, policy, γ) context.
#[derive(Debug, Clone)]
pub struct ParameterField {
    pub kind: FieldKind,
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub gamma: f64,
    pub form: FieldForm,
}

impl ParameterField {
    pub fn new(kind: FieldKind, mdp: &TabularMdp, policy: &Policy, gamma: f64) -> Self {
        Self {
            kind,
            mdp: mdp.clone(),
            policy: policy.clone(),
            gamma,
            form: FieldForm::Q,
        }
    }

    pub fn with_form(mut self, form: FieldForm) -> Self {
        self.form = form;
        self
    }

    pub fn objective(&self, theta: &[f64], gamma: f64) -> Result<f64> {
        objective(&self.mdp, &self.policy, theta, gamma)
    }
}

impl VectorField for ParameterField {
    fn dim(&self) -> usize {
        self.policy.n_params()
    }

    fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (mdp, policy, form) = (&self.mdp, &self.policy, self.form);
        match self.kind {
            FieldKind::GradDiscounted => grad_discounted_form(mdp, policy, theta, self.gamma, form),
            FieldKind::GradBiased => grad_biased_form(mdp, policy, theta, self.gamma, form),
            FieldKind::GradBiasedViaLemma => grad_biased_via_lemma(mdp, policy, theta, self.gamma),
            FieldKind::GradUndiscounted => grad_discounted_form(mdp, policy, theta, 1.0, form),
        }
    }

    fn label(&self) -> String {
        format!("{}(gamma={})", self.kind, self.gamma)
    }
}

struct Context {
    probs: PolicyTable,
    psi: CompatibleFeatures,
}

fn context(mdp: &TabularMdp, policy: &Policy, theta: &[f64]) -> Result<Context> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    let psi = policy.features_from_probs(&probs);
    Ok(Context { probs, psi })
}

/// `Σ_s x(s) Σ_a π(s,a) ψ(s,a) signal(s,a)` with `signal` = Q or advantage.
fn weighted_score_sum(
    mdp: &TabularMdp,
    policy: &Policy,
    ctx: &Context,
    weights: &[f64],
    values: &ValueBundle,
    form: FieldForm,
) -> Vec<f64> {
    let signal = match form {
        FieldForm::Q => &values.q,
        FieldForm::Advantage => &values.adv,
    };
    let mut grad = vec![0.0; policy.n_params()];
    for s in policy.parameterized_states() {
        if s == mdp.terminal || weights[s] == 0.0 {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let c = weights[s] * ctx.probs[(s, a)] * signal[(s, a)];
            for (g, psi) in grad.iter_mut().zip(ctx.psi.get(s, a)) {
                *g += c * psi;
            }
        }
    }
    grad
}

/// `J_γ(θ) = Σ_s d0(s) V_γ(s)`; `γ = 1` gives the undiscounted objective.
pub fn objective(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<f64> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    solvers::objective_table(mdp, &probs, gamma)
}

/// True gradient of `J_γ`.
pub fn grad_discounted(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<Vec<f64>> {
    grad_discounted_form(mdp, policy, theta, gamma, FieldForm::Q)
}

pub fn grad_discounted_form(
    mdp: &TabularMdp,
    policy: &Policy,
    theta: &[f64],
    gamma: f64,
    form: FieldForm,
) -> Result<Vec<f64>> {
    let ctx = context(mdp, policy, theta)?;
    let values = solvers::solve_values_table(mdp, &ctx.probs, gamma)?;
    let weights = solvers::discounted_visitation_table(mdp, &ctx.probs, gamma)?;
    Ok(weighted_score_sum(mdp, policy, &ctx, &weights, &values, form))
}

/// The biased update: undiscounted state visitation paired with `Q_γ`.
pub fn grad_biased(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<Vec<f64>> {
    grad_biased_form(mdp, policy, theta, gamma, FieldForm::Q)
}

pub fn grad_biased_form(
    mdp: &TabularMdp,
    policy: &Policy,
    theta: &[f64],
    gamma: f64,
    form: FieldForm,
) -> Result<Vec<f64>> {
    let ctx = context(mdp, policy, theta)?;
    let values = solvers::solve_values_table(mdp, &ctx.probs, gamma)?;
    let weights = solvers::discounted_visitation_table(mdp, &ctx.probs, 1.0)?;
    Ok(weighted_score_sum(mdp, policy, &ctx, &weights, &values, form))
}

/// Gradient of the undiscounted objective `J`.
pub fn grad_undiscounted(mdp: &TabularMdp, policy: &Policy, theta: &[f64]) -> Result<Vec<f64>> {
    grad_discounted(mdp, policy, theta, 1.0)
}

/// `∂V_γ(s)/∂θ_k` for every state (rows) and parameter (columns), from the
/// differentiated Bellman system
/// `(I − γP_π) u_k = ∂r_π/∂θ_k + γ (∂P_π/∂θ_k) V`.
pub fn value_jacobian(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    let ctx = context(mdp, policy, theta)?;
    let chain = TransientChain::new(mdp, &ctx.probs);
    let system = chain.factor(gamma)?;
    let v = chain.expand(&system.solve(&chain.r));
    value_jacobian_with(mdp, policy, &ctx, &chain, &system, &v, gamma)
}

fn value_jacobian_with(
    mdp: &TabularMdp,
    policy: &Policy,
    ctx: &Context,
    chain: &TransientChain,
    system: &solvers::Factored,
    v: &[f64],
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let np = policy.n_params();
    let na = mdp.n_actions();
    let mut out = DMatrix::zeros(mdp.n_states(), np);
    for k in 0..np {
        let rhs = DVector::from_fn(chain.len(), |i, _| {
            let s = chain.transient[i];
            (0..na)
                .map(|a| {
                    let dpi = ctx.probs[(s, a)] * ctx.psi.get(s, a)[k];
                    if dpi == 0.0 {
                        return 0.0;
                    }
                    let next: f64 = mdp.row(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
                    dpi * mdp.r(s, a) + gamma * dpi * next
                })
                .sum()
        });
        let u = system.solve(&rhs);
        for (i, &s) in chain.transient.iter().enumerate() {
            out[(s, k)] = u[i];
        }
    }
    Ok(out)
}

/// The biased update through the occupancy route:
/// `Σ_{s ≠ s∞} d_γ(s) ∂V_γ(s)/∂θ`.
pub fn grad_biased_via_lemma(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} outside [0, 1]")));
    }
    let ctx = context(mdp, policy, theta)?;
    let chain = TransientChain::new(mdp, &ctx.probs);
    let system = chain.factor(gamma)?;
    let v = chain.expand(&system.solve(&chain.r));
    let dv = value_jacobian_with(mdp, policy, &ctx, &chain, &system, &v, gamma)?;
    let d = solvers::occupancy_closed_form(mdp, &chain, gamma)?;
    let mut grad = vec![0.0; policy.n_params()];
    for &s in &chain.transient {
        for (k, g) in grad.iter_mut().enumerate() {
            *g += d[s] * dv[(s, k)];
        }
    }
    Ok(grad)
}
