//! Exact value functions, visitation series and the weighted occupancy
//! measure, all via dense LU solves on the transient states.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::policy::{Policy, PolicyTable};

/// Target for the certified series tail.
pub const SERIES_TAIL_TARGET: f64 = 1e-12;

/// Hard cap on series length when the tail cannot be certified.
const MAX_SERIES_LEN: usize = 10_000_000;

/// Relative pivot size below which a transient system is reported singular.
const PIVOT_TOL: f64 = 1e-13;

/// Policy-induced Markov chain restricted to the transient states.
#[derive(Debug, Clone)]
pub(crate) struct TransientChain {
    pub transient: Vec<usize>,
    pub n_states: usize,
    /// `P_π` on transient × transient.
    pub p: DMatrix<f64>,
    /// `r_π` on transient states.
    pub r: DVector<f64>,
    /// `d0` on transient states.
    pub d0: DVector<f64>,
}

impl TransientChain {
    pub fn new(mdp: &TabularMdp, probs: &PolicyTable) -> Self {
        let transient = mdp.transient_states();
        let n = transient.len();
        let na = mdp.n_actions();
        let p = DMatrix::from_fn(n, n, |i, j| {
            (0..na)
                .map(|a| probs[(transient[i], a)] * mdp.p(transient[i], a, transient[j]))
                .sum()
        });
        let r = DVector::from_fn(n, |i, _| {
            (0..na).map(|a| probs[(transient[i], a)] * mdp.r(transient[i], a)).sum()
        });
        let d0 = DVector::from_fn(n, |i, _| mdp.initial[transient[i]]);
        Self {
            transient,
            n_states: mdp.n_states(),
            p,
            r,
            d0,
        }
    }

    pub fn len(&self) -> usize {
        self.transient.len()
    }

    /// LU factorisation of `I − β P`.
    pub fn factor(&self, beta: f64) -> Result<Factored> {
        let n = self.len();
        let a = DMatrix::identity(n, n) - &self.p * beta;
        Factored::new(a, beta)
    }

    /// Scatter a transient-indexed vector into a full state vector (terminal = 0).
    pub fn expand(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (i, &s) in self.transient.iter().enumerate() {
            out[s] = x[i];
        }
        out
    }
}

pub(crate) struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Factored {
    fn new(a: DMatrix<f64>, beta: f64) -> Result<Self> {
        let n = a.nrows();
        let lu_t = a.transpose().lu();
        let lu = a.lu();
        if n > 0 {
            let u = lu.u();
            let scale = u.diagonal().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let min = u.diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
            if !(min > PIVOT_TOL * scale) {
                return Err(Error::Singular(format!(
                    "I - {beta}·P_π has pivot {min:e} on {n} transient states"
                )));
            }
        }
        Ok(Self { lu, lu_t })
    }

    /// Solve `(I − βP) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("non-singular after pivot check")
    }

    /// Solve `xᵀ (I − βP) = bᵀ`.
    pub fn solve_left(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu_t.solve(b).expect("non-singular after pivot check")
    }
}

// ---------------------------------------------------------------------------
// Values

/// `V`, `Q` and advantages for one (MDP, policy, γ).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v: Vec<f64>,
    /// Rows are states, columns actions.
    pub q: DMatrix<f64>,
    pub adv: DMatrix<f64>,
    pub gamma: f64,
}

pub fn solve_values(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<ValueBundle> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    solve_values_table(mdp, &probs, gamma)
}

/// [`solve_values`] for an explicit action-probability table.
pub fn solve_values_table(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64) -> Result<ValueBundle> {
    check_unit("gamma", gamma)?;
    let chain = TransientChain::new(mdp, probs);
    let v_t = chain.factor(gamma)?.solve(&chain.r);
    let v = chain.expand(&v_t);
    Ok(bundle_from_v(mdp, v, gamma))
}

pub(crate) fn bundle_from_v(mdp: &TabularMdp, v: Vec<f64>, gamma: f64) -> ValueBundle {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let q = DMatrix::from_fn(ns, na, |s, a| {
        if s == mdp.terminal {
            return 0.0;
        }
        let next: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
        mdp.r(s, a) + gamma * next
    });
    let mut adv = q.clone();
    for s in 0..ns {
        for a in 0..na {
            adv[(s, a)] -= v[s];
        }
    }
    ValueBundle { v, q, adv, gamma }
}

/// `J_γ(θ) = Σ_s d0(s) V_γ(s)`.
pub fn objective_table(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64) -> Result<f64> {
    let values = solve_values_table(mdp, probs, gamma)?;
    Ok(mdp.initial.iter().zip(&values.v).map(|(d, v)| d * v).sum())
}

// ---------------------------------------------------------------------------
// Visitation

/// `Pr(S_t = s)` for `t = 0..=T`, with a bound on the neglected tail.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitationSeries {
    /// `rows[t][s]`, including the terminal state.
    pub rows: Vec<Vec<f64>>,
    /// Upper bound on `Σ_{t>T} Σ_{s ≠ s∞} Pr(S_t = s)`.
    pub tail_bound: f64,
}

pub fn visitation_series(mdp: &TabularMdp, policy: &Policy, theta: &[f64], horizon: usize) -> Result<VisitationSeries> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    Ok(visitation_series_table(mdp, &probs, horizon))
}

pub fn visitation_series_table(mdp: &TabularMdp, probs: &PolicyTable, horizon: usize) -> VisitationSeries {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let p_full: DMatrix<f64> = DMatrix::from_fn(ns, ns, |s, next| (0..na).map(|a| probs[(s, a)] * mdp.p(s, a, next)).sum());
    let mut rows = Vec::with_capacity(horizon + 1);
    let mut current = mdp.initial.clone();
    rows.push(current.clone());
    for _ in 0..horizon {
        let mut next = vec![0.0; ns];
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, out) in next.iter_mut().enumerate() {
                *out += mass * p_full[(s, j)];
            }
        }
        rows.push(next.clone());
        current = next;
    }
    let chain = TransientChain::new(mdp, probs);
    let bound = TailBound::new(&chain.p);
    let last: f64 = chain.transient.iter().map(|&s| current[s].abs()).sum();
    VisitationSeries {
        rows,
        tail_bound: bound.tail(last),
    }
}

/// Geometric bound on `Σ_{j≥1} ‖x P^j‖₁` from a block norm `‖P^m‖ = ρ < 1`.
///
/// For row vectors `‖x P‖₁ ≤ ‖x‖₁ · max_row_sum(P)`, and every power of a
/// substochastic matrix has row sums ≤ 1, so
/// `Σ_{j≥1} ‖x P^j‖₁ ≤ ‖x‖₁ · m / (1 − ρ)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TailBound {
    pub block: usize,
    pub rho: f64,
}

impl TailBound {
    pub fn new(p: &DMatrix<f64>) -> Self {
        let n = p.nrows();
        if n == 0 {
            return Self { block: 1, rho: 0.0 };
        }
        let max_row = |m: &DMatrix<f64>| {
            m.row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let mut power = p.clone();
        let mut best = Self {
            block: 1,
            rho: max_row(&power),
        };
        for m in 2..=(2 * n).max(2) {
            power = &power * p;
            let rho = max_row(&power);
            if rho < 1.0 && (best.rho >= 1.0 || (m as f64) / (1.0 - rho) < best.kappa()) {
                best = Self { block: m, rho };
            }
        }
        best
    }

    pub fn kappa(&self) -> f64 {
        if self.rho < 1.0 {
            self.block as f64 / (1.0 - self.rho)
        } else {
            f64::INFINITY
        }
    }

    pub fn tail(&self, norm: f64) -> f64 {
        if norm == 0.0 {
            0.0
        } else {
            norm * self.kappa()
        }
    }
}

/// `x_β(s) = Σ_t β^t Pr(S_t = s)` on transient states (terminal entry 0).
pub fn discounted_visitation(mdp: &TabularMdp, policy: &Policy, theta: &[f64], beta: f64) -> Result<Vec<f64>> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    discounted_visitation_table(mdp, &probs, beta)
}

pub fn discounted_visitation_table(mdp: &TabularMdp, probs: &PolicyTable, beta: f64) -> Result<Vec<f64>> {
    check_unit("beta", beta)?;
    let chain = TransientChain::new(mdp, probs);
    let x = chain.factor(beta)?.solve_left(&chain.d0);
    Ok(chain.expand(&x))
}

/// Expected number of steps before absorption, per start state.
pub fn expected_absorption_steps(mdp: &TabularMdp, probs: &PolicyTable) -> Result<Vec<f64>> {
    let chain = TransientChain::new(mdp, probs);
    let ones = DVector::from_element(chain.len(), 1.0);
    let steps = chain.factor(1.0)?.solve(&ones);
    Ok(chain.expand(&steps))
}

// ---------------------------------------------------------------------------
// Occupancy

/// The weighted state distribution `d(s) = d0(s) + (1 − γ) Σ_{t≥1} Pr(S_t = s)`.
///
/// The terminal state is not part of the measure (its visitation series
/// diverges); its entry in `d` and `series_d` is held at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    /// Closed-form evaluation through the fundamental matrix.
    pub d: Vec<f64>,
    /// Truncated-series evaluation, for audit.
    pub series_d: Vec<f64>,
    /// `Σ_t γ^t Pr(S_t = s)`.
    pub visitation_discounted: Vec<f64>,
    pub truncation_horizon: usize,
    /// Bound on `|d − series_d|` per state from the neglected tail.
    pub tail_bound: f64,
    pub gamma: f64,
}

pub fn occupancy_measure(mdp: &TabularMdp, policy: &Policy, theta: &[f64], gamma: f64) -> Result<OccupancyMeasure> {
    policy.check_mdp(mdp)?;
    let probs = policy.probs(theta)?;
    occupancy_measure_table(mdp, &probs, gamma)
}

pub fn occupancy_measure_table(mdp: &TabularMdp, probs: &PolicyTable, gamma: f64) -> Result<OccupancyMeasure> {
    check_unit("gamma", gamma)?;
    let chain = TransientChain::new(mdp, probs);
    let d = occupancy_closed_form(mdp, &chain, gamma)?;
    let visitation_discounted = chain.expand(&chain.factor(gamma)?.solve_left(&chain.d0));

    // series: Σ_{t≥1} p_t on transient states, stopped once the tail is certified
    let bound = TailBound::new(&chain.p);
    let pt = chain.p.transpose();
    let mut row = chain.d0.clone();
    let mut sum = DVector::zeros(chain.len());
    let mut horizon = 0;
    let mut tail = bound.tail(row.lp_norm(1));
    while tail >= SERIES_TAIL_TARGET && horizon < MAX_SERIES_LEN {
        row = &pt * &row;
        sum += &row;
        horizon += 1;
        tail = bound.tail(row.lp_norm(1));
    }
    let mut series_d = chain.expand(&(&chain.d0 + sum * (1.0 - gamma)));
    if gamma == 1.0 {
        series_d = mdp.initial.clone();
        series_d[mdp.terminal] = 0.0;
    }

    Ok(OccupancyMeasure {
        d,
        series_d,
        visitation_discounted,
        truncation_horizon: horizon,
        tail_bound: (1.0 - gamma) * tail,
        gamma,
    })
}

pub(crate) fn occupancy_closed_form(mdp: &TabularMdp, chain: &TransientChain, gamma: f64) -> Result<Vec<f64>> {
    if gamma == 1.0 {
        // all weights beyond t = 0 vanish
        let mut d = mdp.initial.clone();
        d[mdp.terminal] = 0.0;
        return Ok(d);
    }
    // Σ_{t≥0} p_t = d0ᵀ (I − P)^{-1}; subtract t = 0
    let total = chain.factor(1.0)?.solve_left(&chain.d0);
    let later = total - &chain.d0;
    Ok(chain.expand(&(&chain.d0 + later * (1.0 - gamma))))
}

/// Largest `|Σ_{t=0}^{i} w(t) γ^{i−t} − 1|` over `i ≤ i_max`, with
/// `w(0) = 1` and `w(t) = 1 − γ` for `t ≥ 1`.
pub fn weight_sequence_check(gamma: f64, i_max: usize) -> f64 {
    let weight = |t: usize| if t == 0 { 1.0 } else { 1.0 - gamma };
    (0..=i_max)
        .map(|i| {
            let sum: f64 = (0..=i).map(|t| weight(t) * gamma.powi((i - t) as i32)).sum();
            (sum - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {x} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(len: usize) -> (TabularMdp, Policy) {
        let names: Vec<String> = (1..=len).map(|i| format!("s{i}")).chain(["sInf".to_string()]).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let mut m = TabularMdp::skeleton(&refs, &["a"], "sInf", 1.0).unwrap();
        for s in 0..len - 1 {
            m.set_deterministic(s, 0, s + 1, 1.0);
        }
        let p = Policy::from_slots(crate::policy::PolicyKind::TabularSoftmax, len + 1, 1, vec![None; len + 1]).unwrap();
        (m, p)
    }

    #[test]
    fn deterministic_chain_visits_in_order() {
        let (m, p) = chain(5);
        let series = visitation_series(&m, &p, &[], 6).unwrap();
        assert_eq!(series.rows[0], m.initial);
        for t in 0..=4 {
            assert_eq!(series.rows[t][t], 1.0);
        }
        assert_eq!(series.rows[5][5], 1.0);
        assert_eq!(series.tail_bound, 0.0);
    }

    #[test]
    fn chain_values_count_remaining_steps() {
        let (m, p) = chain(5);
        let v = solve_values(&m, &p, &[], 1.0).unwrap();
        assert_eq!(v.v, vec![4.0, 3.0, 2.0, 1.0, 0.0, 0.0]);
        let steps = expected_absorption_steps(&m, &p.probs(&[]).unwrap()).unwrap();
        assert_eq!(steps[0], 5.0);
    }

    #[test]
    fn occupancy_at_gamma_one_is_initial() {
        let (m, p) = chain(3);
        let occ = occupancy_measure(&m, &p, &[], 1.0).unwrap();
        assert_eq!(occ.d, m.initial);
        assert_eq!(occ.series_d, m.initial);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut m = TabularMdp::skeleton(&["s1", "s2", "sInf"], &["a"], "sInf", 1.0).unwrap();
        m.set_deterministic(0, 0, 1, 1.0);
        m.set_deterministic(1, 0, 0, 1.0);
        let p = Policy::from_slots(crate::policy::PolicyKind::TabularSoftmax, 3, 1, vec![None; 3]).unwrap();
        assert!(matches!(solve_values(&m, &p, &[], 1.0), Err(Error::Singular(_))));
        // discounting makes it solvable again
        let v = solve_values(&m, &p, &[], 0.5).unwrap();
        assert!((v.v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weight_sequence_edges() {
        assert_eq!(weight_sequence_check(0.37, 0), 0.0);
        assert_eq!(weight_sequence_check(0.0, 5), 0.0);
        assert!(weight_sequence_check(0.99, 100) < 1e-12);
    }

    #[test]
    fn gamma_out_of_range() {
        let (m, p) = chain(2);
        assert!(matches!(solve_values(&m, &p, &[], 1.5), Err(Error::InvalidArgument(_))));
    }
}
