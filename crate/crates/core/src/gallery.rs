//! Built-in counterexample MDPs and a random-MDP generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Rewards and transitions taken from the worked derivation.
    DerivationExact,
    /// Rebuilt from a qualitative description; only the listed properties are certified.
    Reconstruction,
    /// Generated, for property tests.
    Random,
}

#[derive(Debug, Clone, Serialize)]
pub struct GalleryEntry {
    pub name: String,
    #[serde(skip)]
    pub mdp: TabularMdp,
    #[serde(skip)]
    pub policy: Policy,
    pub provenance: Provenance,
    /// Discount at which the entry's headline behaviour is stated.
    pub gamma_probe: f64,
    /// Properties the construction guarantees, each covered by a test.
    pub certified: Vec<String>,
    pub expected_behavior: String,
}

pub const NAMES: [&str; 3] = ["figure1", "figure2", "figure3"];

/// Look up a built-in entry by name with default arguments.
pub fn by_name(name: &str) -> Option<GalleryEntry> {
    match name {
        "figure1" => Some(figure1()),
        "figure2" => Some(figure2(4, 0.5).expect("default delay is valid")),
        "figure3" => Some(figure3()),
        _ => None,
    }
}

/// Two decision states in sequence.
///
/// `s1 --a1--> s2`, `s1 --a2--> s∞`, `s2 --a1--> s∞ (+1)`, `s2 --a2--> s∞`,
/// with `π(s_i, a1) = σ(θ_i)`. The +1 sits on `(s2, a1)` so that
/// `V(s2) = σ(θ2)` and `V(s1) = γ σ(θ1) σ(θ2)`.
pub fn figure1() -> GalleryEntry {
    let mut mdp = TabularMdp::skeleton(&["s1", "s2", "sInf"], &["a1", "a2"], "sInf", 0.5).expect("static");
    mdp.set_deterministic(0, 0, 1, 0.0);
    mdp.set_deterministic(0, 1, 2, 0.0);
    mdp.set_deterministic(1, 0, 2, 1.0);
    mdp.set_deterministic(1, 1, 2, 0.0);
    let policy = Policy::sigmoid(3, &[Some(0), Some(1), None]).expect("static");
    GalleryEntry {
        name: "figure1".into(),
        mdp,
        policy,
        provenance: Provenance::DerivationExact,
        gamma_probe: 0.5,
        certified: vec![
            "V(s1) = gamma*sigma(t1)*sigma(t2)".into(),
            "d(s1) = 1, d(s2) = (1-gamma)*sigma(t1)".into(),
            "mixed partials of grad_biased: gamma*s1'*s2' vs s1'*s2'".into(),
            "episodes last at most 2 decisions".into(),
        ],
        expected_behavior: "biased field has an asymmetric Jacobian for every gamma < 1".into(),
    }
}

/// Short reward now versus a larger reward after a delay.
///
/// `s1 --a1--> s2 (+1) --> s∞`; `s1 --a2--> s3 --> … --> s_{2+delay} --> s_{3+delay} (+2 on entry) --> s∞`.
/// Only `s1` is parameterised; elsewhere both actions behave identically.
/// The a1 path returns 1 under any discount, the a2 path `2γ^delay`.
pub fn figure2(chain_delay: usize, gamma_probe: f64) -> Result<GalleryEntry> {
    if chain_delay < 2 {
        return Err(Error::InvalidArgument(format!("chain_delay must be >= 2, got {chain_delay}")));
    }
    if !(0.0..=1.0).contains(&gamma_probe) {
        return Err(Error::InvalidArgument(format!("gamma_probe = {gamma_probe} outside [0, 1]")));
    }
    let last = 3 + chain_delay;
    let mut names: Vec<String> = (1..=last).map(|i| format!("s{i}")).collect();
    names.push("sInf".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut mdp = TabularMdp::skeleton(&refs, &["a1", "a2"], "sInf", gamma_probe)?;
    let idx = |i: usize| i - 1; // s_i -> row
    let term = mdp.terminal;
    mdp.set_deterministic(idx(1), 0, idx(2), 1.0);
    mdp.set_deterministic(idx(1), 1, idx(3), 0.0);
    for a in 0..2 {
        mdp.set_deterministic(idx(2), a, term, 0.0);
        for i in 3..last - 1 {
            mdp.set_deterministic(idx(i), a, idx(i + 1), 0.0);
        }
        mdp.set_deterministic(idx(last - 1), a, idx(last), 2.0);
        mdp.set_deterministic(idx(last), a, term, 0.0);
    }
    let mut map = vec![None; mdp.n_states()];
    map[0] = Some(0);
    let policy = Policy::sigmoid(mdp.n_states(), &map)?;
    Ok(GalleryEntry {
        name: "figure2".into(),
        mdp,
        policy,
        provenance: Provenance::Reconstruction,
        gamma_probe,
        certified: vec![
            "a1 path: J = 1, J_gamma = 1".into(),
            format!("a2 path: J = 2, J_gamma = 2*gamma^{chain_delay}"),
            "advantage is zero in every state but s1".into(),
            "only s1 is parameterised".into(),
        ],
        expected_behavior: format!(
            "biased flow picks a1 when 2*gamma^{chain_delay} < 1 (discount-optimal, undiscounted-pessimal)"
        ),
    })
}

/// One tied parameter shared by `s1` and `s2`.
///
/// `s1 --a1--> s2 (+1)`, `s1 --a2--> s2`; `s2 --a1--> s3`, `s2 --a2--> s5 (+2)`;
/// `s3 --> s∞ (+100)`, `s5 --> s∞`. Always-a1 maximises both `J = 101` and
/// `J_{γ=0} = 1`, yet at `γ = 0` the biased field is `−σ(θ)(1 − σ(θ)) < 0`.
pub fn figure3() -> GalleryEntry {
    let mut mdp =
        TabularMdp::skeleton(&["s1", "s2", "s3", "s5", "sInf"], &["a1", "a2"], "sInf", 0.0).expect("static");
    let term = mdp.terminal;
    mdp.set_deterministic(0, 0, 1, 1.0);
    mdp.set_deterministic(0, 1, 1, 0.0);
    mdp.set_deterministic(1, 0, 2, 0.0);
    mdp.set_deterministic(1, 1, 3, 2.0);
    for a in 0..2 {
        mdp.set_deterministic(2, a, term, 100.0);
        mdp.set_deterministic(3, a, term, 0.0);
    }
    let policy = Policy::sigmoid(5, &[Some(0), Some(0), None, None, None]).expect("static");
    GalleryEntry {
        name: "figure3".into(),
        mdp,
        policy,
        provenance: Provenance::Reconstruction,
        gamma_probe: 0.0,
        certified: vec![
            "always-a1 maximises J (= 101) and J_{gamma=0} (= 1)".into(),
            "advantages at s3 and s5 are zero".into(),
            "grad_biased(theta; gamma=0) = -sigma(1-sigma) < 0 for all theta".into(),
            "a single tied parameter controls s1 and s2".into(),
        ],
        expected_behavior: "biased flow at gamma = 0 drives the policy to always-a2, the minimum of both objectives"
            .into(),
    }
}

/// Random episodic MDP with a full tabular softmax policy.
///
/// `n_states` counts the terminal state. Every transient row routes at least
/// `min_exit_prob` to the terminal state, which certifies episodicity.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    reward_scale: f64,
    min_exit_prob: f64,
) -> Result<GalleryEntry> {
    if n_states < 2 {
        return Err(Error::InvalidArgument(format!("n_states must be >= 2, got {n_states}")));
    }
    if n_actions < 1 {
        return Err(Error::InvalidArgument("n_actions must be >= 1".into()));
    }
    if !(min_exit_prob > 0.0 && min_exit_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!("min_exit_prob = {min_exit_prob} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<String> = (1..n_states).map(|i| format!("s{i}")).collect();
    names.push("sInf".into());
    let actions: Vec<String> = (1..=n_actions).map(|i| format!("a{i}")).collect();
    let sref: Vec<&str> = names.iter().map(String::as_str).collect();
    let aref: Vec<&str> = actions.iter().map(String::as_str).collect();
    let mut mdp = TabularMdp::skeleton(&sref, &aref, "sInf", 0.9)?;
    let term = mdp.terminal;
    let ns = n_states;

    for s in mdp.transient_states() {
        for a in 0..n_actions {
            // exponential draws normalised: a flat Dirichlet row
            let weights: Vec<f64> = (0..ns).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = weights.iter().sum();
            let start = (s * n_actions + a) * ns;
            for (j, w) in weights.iter().enumerate() {
                mdp.transition[start + j] = (1.0 - min_exit_prob) * w / total;
            }
            mdp.transition[start + term] += min_exit_prob;
            mdp.reward[s * n_actions + a] = reward_scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
    }
    let transient = mdp.transient_states();
    let weights: Vec<f64> = transient.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    mdp.initial = vec![0.0; ns];
    for (&s, w) in transient.iter().zip(&weights) {
        mdp.initial[s] = w / total;
    }

    let policy = Policy::softmax(&mdp);
    Ok(GalleryEntry {
        name: format!("random-{n_states}x{n_actions}-{seed}"),
        mdp,
        policy,
        provenance: Provenance::Random,
        gamma_probe: 0.9,
        certified: vec![format!("at least {min_exit_prob} exit mass from every transient row")],
        expected_behavior: "none; property-test input".into(),
    })
}
