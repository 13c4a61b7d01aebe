//! Finite episodic MDPs: dense tables, validation, and the JSON file schema.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability normalisation.
pub const PROB_TOL: f64 = 1e-12;

/// Spectral radius at or above this value is treated as "not transient".
const RADIUS_LIMIT: f64 = 1.0 - 1e-10;

/// A finite MDP with a designated absorbing terminal state.
///
/// All tables are dense and indexed by position in `states` / `actions`.
/// `transition` is laid out as `[s][a][s']`, `reward` as `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub terminal: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    /// An MDP with every transient row sent straight to the terminal state,
    /// zero rewards, and all start mass on the first non-terminal state.
    pub fn skeleton(states: &[&str], actions: &[&str], terminal: &str, gamma: f64) -> Result<Self> {
        let states: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        let actions: Vec<String> = actions.iter().map(|s| s.to_string()).collect();
        let terminal = states
            .iter()
            .position(|s| s == terminal)
            .ok_or_else(|| Error::InvalidArgument(format!("terminal state `{terminal}` not in state list")))?;
        let (ns, na) = (states.len(), actions.len());
        let mut transition = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                transition[(s * na + a) * ns + terminal] = 1.0;
            }
        }
        let mut initial = vec![0.0; ns];
        if let Some(first) = (0..ns).find(|&s| s != terminal) {
            initial[first] = 1.0;
        }
        Ok(Self {
            states,
            actions,
            terminal,
            transition,
            reward: vec![0.0; ns * na],
            initial,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        let ns = self.n_states();
        self.transition[(s * self.n_actions() + a) * ns + next]
    }

    /// The distribution over next states for `(s, a)`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states();
        let start = (s * self.n_actions() + a) * ns;
        &self.transition[start..start + ns]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|s| s == name)
    }

    /// Replace the row `(s, a)` with a single deterministic transition.
    pub fn set_deterministic(&mut self, s: usize, a: usize, next: usize, reward: f64) {
        let ns = self.n_states();
        let na = self.n_actions();
        let start = (s * na + a) * ns;
        self.transition[start..start + ns].fill(0.0);
        self.transition[start + next] = 1.0;
        self.reward[s * na + a] = reward;
    }

    /// Non-terminal states in declared order.
    pub fn transient_states(&self) -> Vec<usize> {
        (0..self.n_states()).filter(|&s| s != self.terminal).collect()
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_mdp(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        file.into_mdp()
    }

    pub fn to_json_string(&self) -> String {
        let file = MdpFile::from_mdp(self);
        let mut text = serde_json::to_string_pretty(&file).expect("MDP schema serialises");
        text.push('\n');
        text
    }
}

/// Read an MDP file and check every invariant.
pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mdp = TabularMdp::from_json_str(&text)?;
    let report = mdp.validate();
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    Ok(mdp)
}

pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, mdp.to_json_string()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { table: String, expected: usize, got: usize },
    TerminalIndex { terminal: usize },
    Gamma { gamma: f64 },
    ProbabilityRange { state: String, action: String, next: String, p: f64 },
    RowSum { state: String, action: String, sum: f64 },
    InitialRange { state: String, p: f64 },
    InitialSum { sum: f64 },
    TerminalNotAbsorbing { action: String, p_stay: f64 },
    TerminalReward { action: String, reward: f64 },
    NonFinite { table: String },
    TerminalUnreachable { state: String },
    SpectralRadius { radius: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { table, expected, got } => {
                write!(f, "table `{table}` has {got} entries, expected {expected}")
            }
            Violation::TerminalIndex { terminal } => write!(f, "terminal index {terminal} out of range"),
            Violation::Gamma { gamma } => write!(f, "gamma {gamma} outside [0, 1]"),
            Violation::ProbabilityRange { state, action, next, p } => {
                write!(f, "P({state}, {action}, {next}) = {p} outside [0, 1]")
            }
            Violation::RowSum { state, action, sum } => {
                write!(f, "transition row ({state}, {action}) sums to {sum}")
            }
            Violation::InitialRange { state, p } => write!(f, "d0({state}) = {p} outside [0, 1]"),
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::TerminalNotAbsorbing { action, p_stay } => {
                write!(f, "terminal state is not absorbing under {action} (stay prob {p_stay})")
            }
            Violation::TerminalReward { action, reward } => {
                write!(f, "terminal state pays reward {reward} under {action}")
            }
            Violation::NonFinite { table } => write!(f, "table `{table}` contains non-finite values"),
            Violation::TerminalUnreachable { state } => {
                write!(f, "episodicity: terminal state unreachable from reachable state {state}")
            }
            Violation::SpectralRadius { radius } => write!(
                f,
                "episodicity: transient submatrix under the uniform policy has spectral radius {radius} (need < 1)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Start mass on the terminal state produces zero-length episodes.
    InitialOnTerminal { p: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::InitialOnTerminal { p } => write!(f, "d0 places mass {p} on the terminal state"),
        }
    }
}

/// Outcome of [`validate_mdp`]. Valid iff `violations` is empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
    /// Spectral radius of the uniform-policy transient submatrix, when computed.
    pub spectral_radius: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());

    let shapes = [
        ("transition", ns * na * ns, mdp.transition.len()),
        ("reward", ns * na, mdp.reward.len()),
        ("initial", ns, mdp.initial.len()),
    ];
    for (table, expected, got) in shapes {
        if expected != got {
            v.push(Violation::Shape {
                table: table.into(),
                expected,
                got,
            });
        }
    }
    if mdp.terminal >= ns {
        v.push(Violation::TerminalIndex { terminal: mdp.terminal });
    }
    if !v.is_empty() {
        return report;
    }
    for (table, values) in [
        ("transition", &mdp.transition),
        ("reward", &mdp.reward),
        ("initial", &mdp.initial),
    ] {
        if values.iter().any(|x| !x.is_finite()) {
            v.push(Violation::NonFinite { table: table.into() });
        }
    }
    if !v.is_empty() {
        return report;
    }
    if !(0.0..=1.0).contains(&mdp.gamma) {
        v.push(Violation::Gamma { gamma: mdp.gamma });
    }

    for s in 0..ns {
        for a in 0..na {
            let row = mdp.row(s, a);
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    v.push(Violation::ProbabilityRange {
                        state: mdp.states[s].clone(),
                        action: mdp.actions[a].clone(),
                        next: mdp.states[next].clone(),
                        p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                v.push(Violation::RowSum {
                    state: mdp.states[s].clone(),
                    action: mdp.actions[a].clone(),
                    sum,
                });
            }
        }
    }

    for (s, &p) in mdp.initial.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            v.push(Violation::InitialRange {
                state: mdp.states[s].clone(),
                p,
            });
        }
    }
    let d0_sum: f64 = mdp.initial.iter().sum();
    if (d0_sum - 1.0).abs() > PROB_TOL {
        v.push(Violation::InitialSum { sum: d0_sum });
    }
    if mdp.initial[mdp.terminal] > 0.0 {
        report.warnings.push(Warning::InitialOnTerminal {
            p: mdp.initial[mdp.terminal],
        });
    }

    let term = mdp.terminal;
    for a in 0..na {
        let p_stay = mdp.p(term, a, term);
        if (p_stay - 1.0).abs() > PROB_TOL {
            v.push(Violation::TerminalNotAbsorbing {
                action: mdp.actions[a].clone(),
                p_stay,
            });
        }
        if mdp.r(term, a) != 0.0 {
            v.push(Violation::TerminalReward {
                action: mdp.actions[a].clone(),
                reward: mdp.r(term, a),
            });
        }
    }

    episodicity(mdp, &mut report);
    report
}

/// Reachability of the terminal state plus the spectral radius of the
/// uniform-policy transient submatrix. Any strictly positive policy has the
/// same support as the uniform one, so the certificate covers every policy
/// representable by a softmax or sigmoid parameterisation.
fn episodicity(mdp: &TabularMdp, report: &mut ValidationReport) {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let term = mdp.terminal;
    let edge = |s: usize, next: usize| (0..na).any(|a| mdp.p(s, a, next) > 0.0);

    let mut reachable = vec![false; ns];
    let mut queue: VecDeque<usize> = (0..ns).filter(|&s| mdp.initial[s] > 0.0).collect();
    for &s in &queue {
        reachable[s] = true;
    }
    while let Some(s) = queue.pop_front() {
        for next in 0..ns {
            if !reachable[next] && edge(s, next) {
                reachable[next] = true;
                queue.push_back(next);
            }
        }
    }

    let mut exits = vec![false; ns];
    exits[term] = true;
    let mut queue = VecDeque::from([term]);
    while let Some(target) = queue.pop_front() {
        for s in 0..ns {
            if !exits[s] && edge(s, target) {
                exits[s] = true;
                queue.push_back(s);
            }
        }
    }
    for s in 0..ns {
        if reachable[s] && !exits[s] {
            report.violations.push(Violation::TerminalUnreachable {
                state: mdp.states[s].clone(),
            });
        }
    }

    let transient = mdp.transient_states();
    if transient.is_empty() {
        report.spectral_radius = Some(0.0);
        return;
    }
    let n = transient.len();
    let uniform = 1.0 / na.max(1) as f64;
    let sub = DMatrix::from_fn(n, n, |i, j| {
        (0..na)
            .map(|a| uniform * mdp.p(transient[i], a, transient[j]))
            .sum::<f64>()
    });
    let radius = sub
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    report.spectral_radius = Some(radius);
    if radius >= RADIUS_LIMIT {
        report.violations.push(Violation::SpectralRadius { radius });
    }
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    states: Vec<String>,
    actions: Vec<String>,
    terminal: String,
    transitions: Vec<TransitionEntry>,
    #[serde(default)]
    rewards: Vec<RewardEntry>,
    d0: Vec<InitialEntry>,
    gamma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionEntry {
    s: String,
    a: String,
    to: String,
    p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardEntry {
    s: String,
    a: String,
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialEntry {
    s: String,
    p: f64,
}

fn lookup(index: &HashMap<&str, usize>, name: &str, field: String) -> Result<usize> {
    index.get(name).copied().ok_or_else(|| Error::Parse {
        location: field,
        message: format!("unknown identifier `{name}`"),
    })
}

fn unique_index<'a>(names: &'a [String], field: &str) -> Result<HashMap<&'a str, usize>> {
    let mut index = HashMap::new();
    for (i, name) in names.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            return Err(Error::Parse {
                location: format!("{field}[{i}]"),
                message: format!("duplicate identifier `{name}`"),
            });
        }
    }
    Ok(index)
}

impl MdpFile {
    fn into_mdp(self) -> Result<TabularMdp> {
        let states = unique_index(&self.states, "states")?;
        let actions = unique_index(&self.actions, "actions")?;
        let terminal = lookup(&states, &self.terminal, "terminal".into())?;
        let (ns, na) = (self.states.len(), self.actions.len());

        let mut transition = vec![0.0; ns * na * ns];
        let mut seen = vec![false; ns * na];
        let mut seen_entry = vec![false; ns * na * ns];
        for (i, t) in self.transitions.iter().enumerate() {
            let s = lookup(&states, &t.s, format!("transitions[{i}].s"))?;
            let a = lookup(&actions, &t.a, format!("transitions[{i}].a"))?;
            let to = lookup(&states, &t.to, format!("transitions[{i}].to"))?;
            let k = (s * na + a) * ns + to;
            if seen_entry[k] {
                return Err(Error::Parse {
                    location: format!("transitions[{i}]"),
                    message: format!("duplicate transition ({}, {}, {})", t.s, t.a, t.to),
                });
            }
            seen_entry[k] = true;
            seen[s * na + a] = true;
            transition[k] = t.p;
        }
        for s in 0..ns {
            for a in 0..na {
                if seen[s * na + a] {
                    continue;
                }
                if s == terminal {
                    transition[(s * na + a) * ns + terminal] = 1.0;
                } else {
                    return Err(Error::Parse {
                        location: "transitions".into(),
                        message: format!("missing transition row for ({}, {})", self.states[s], self.actions[a]),
                    });
                }
            }
        }

        let mut reward = vec![0.0; ns * na];
        let mut seen_reward = vec![false; ns * na];
        for (i, r) in self.rewards.iter().enumerate() {
            let s = lookup(&states, &r.s, format!("rewards[{i}].s"))?;
            let a = lookup(&actions, &r.a, format!("rewards[{i}].a"))?;
            if seen_reward[s * na + a] {
                return Err(Error::Parse {
                    location: format!("rewards[{i}]"),
                    message: format!("duplicate reward ({}, {})", r.s, r.a),
                });
            }
            seen_reward[s * na + a] = true;
            reward[s * na + a] = r.r;
        }

        let mut initial = vec![0.0; ns];
        for (i, d) in self.d0.iter().enumerate() {
            let s = lookup(&states, &d.s, format!("d0[{i}].s"))?;
            initial[s] += d.p;
        }

        Ok(TabularMdp {
            states: self.states,
            actions: self.actions,
            terminal,
            transition,
            reward,
            initial,
            gamma: self.gamma,
        })
    }

    fn from_mdp(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                for next in 0..ns {
                    let p = mdp.p(s, a, next);
                    if p != 0.0 {
                        transitions.push(TransitionEntry {
                            s: mdp.states[s].clone(),
                            a: mdp.actions[a].clone(),
                            to: mdp.states[next].clone(),
                            p,
                        });
                    }
                }
                if mdp.r(s, a) != 0.0 {
                    rewards.push(RewardEntry {
                        s: mdp.states[s].clone(),
                        a: mdp.actions[a].clone(),
                        r: mdp.r(s, a),
                    });
                }
            }
        }
        let d0 = (0..ns)
            .filter(|&s| mdp.initial[s] != 0.0)
            .map(|s| InitialEntry {
                s: mdp.states[s].clone(),
                p: mdp.initial[s],
            })
            .collect();
        MdpFile {
            states: mdp.states.clone(),
            actions: mdp.actions.clone(),
            terminal: mdp.states[mdp.terminal].clone(),
            transitions,
            rewards,
            d0,
            gamma: mdp.gamma,
        }
    }
}
