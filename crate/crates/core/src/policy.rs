//! Softmax-family policy parameterisations with optional parameter tying.
//!
//! Every parameterisation is a softmax over per-action logits, where the
//! logit of `(s, a)` is either a parameter `θ_k` or the constant 0. A
//! two-action state with a slot on its first action only gives the logistic
//! form `π(s, a1) = σ(θ_k)`. Several states may share the same slot index,
//! which forces them to execute the same policy.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Action probabilities, one row per state.
pub type PolicyTable = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    TabularSigmoid,
    TabularSoftmax,
    Tied,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy {
    kind: PolicyKind,
    n_states: usize,
    n_actions: usize,
    n_params: usize,
    /// Parameter index feeding the logit of `(s, a)`, laid out `[s][a]`.
    slots: Vec<Option<usize>>,
}

impl Policy {
    /// General constructor from an explicit slot table.
    pub fn from_slots(
        kind: PolicyKind,
        n_states: usize,
        n_actions: usize,
        slots: Vec<Option<usize>>,
    ) -> Result<Self> {
        if slots.len() != n_states * n_actions {
            return Err(Error::dim("policy slot table", n_states * n_actions, slots.len()));
        }
        let n_params = slots.iter().flatten().map(|&k| k + 1).max().unwrap_or(0);
        Ok(Self {
            kind,
            n_states,
            n_actions,
            n_params,
            slots,
        })
    }

    /// Two-action logistic policy: `π(s, a1) = σ(θ[k])` for each `Some(k)` in
    /// `state_params`; `None` leaves the state uniform. Repeated indices tie
    /// states together.
    pub fn sigmoid(n_states: usize, state_params: &[Option<usize>]) -> Result<Self> {
        if state_params.len() != n_states {
            return Err(Error::dim("sigmoid state map", n_states, state_params.len()));
        }
        let mut slots = vec![None; n_states * 2];
        for (s, &k) in state_params.iter().enumerate() {
            slots[s * 2] = k;
        }
        let mut used: Vec<usize> = state_params.iter().flatten().copied().collect();
        used.sort_unstable();
        let before = used.len();
        used.dedup();
        let kind = if used.len() < before {
            PolicyKind::Tied
        } else {
            PolicyKind::TabularSigmoid
        };
        Self::from_slots(kind, n_states, 2, slots)
    }

    /// Tabular softmax with one parameter per (non-terminal state, action).
    pub fn softmax(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut slots = vec![None; ns * na];
        let mut k = 0;
        for s in mdp.transient_states() {
            for a in 0..na {
                slots[s * na + a] = Some(k);
                k += 1;
            }
        }
        Self::from_slots(PolicyKind::TabularSoftmax, ns, na, slots).expect("shape matches")
    }

    /// Per-state sigmoid on every non-terminal state, parameters in state order.
    pub fn sigmoid_per_state(mdp: &TabularMdp) -> Result<Self> {
        if mdp.n_actions() != 2 {
            return Err(Error::InvalidArgument(format!(
                "sigmoid policies need exactly 2 actions, MDP has {}",
                mdp.n_actions()
            )));
        }
        let mut map = vec![None; mdp.n_states()];
        for (k, s) in mdp.transient_states().into_iter().enumerate() {
            map[s] = Some(k);
        }
        Self::sigmoid(mdp.n_states(), &map)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn slot(&self, s: usize, a: usize) -> Option<usize> {
        self.slots[s * self.n_actions + a]
    }

    /// States whose action distribution depends on θ.
    pub fn parameterized_states(&self) -> Vec<usize> {
        (0..self.n_states)
            .filter(|&s| (0..self.n_actions).any(|a| self.slot(s, a).is_some()))
            .collect()
    }

    /// Check this policy fits the MDP's state and action counts.
    pub fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if mdp.n_states() != self.n_states {
            return Err(Error::dim("policy states", mdp.n_states(), self.n_states));
        }
        if mdp.n_actions() != self.n_actions {
            return Err(Error::dim("policy actions", mdp.n_actions(), self.n_actions));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::dim("theta", self.n_params, theta.len()));
        }
        Ok(())
    }

    pub fn probs(&self, theta: &[f64]) -> Result<PolicyTable> {
        self.check_theta(theta)?;
        let na = self.n_actions;
        let mut table = DMatrix::zeros(self.n_states, na);
        let mut logits = vec![0.0; na];
        for s in 0..self.n_states {
            for (a, l) in logits.iter_mut().enumerate() {
                *l = self.slot(s, a).map_or(0.0, |k| theta[k]);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (a, &l) in logits.iter().enumerate() {
                let e = (l - max).exp();
                table[(s, a)] = e;
                z += e;
            }
            for a in 0..na {
                table[(s, a)] /= z;
            }
        }
        Ok(table)
    }

    /// Compatible features `ψ(s, a) = ∂ ln π(s, a) / ∂θ`.
    pub fn features(&self, theta: &[f64]) -> Result<CompatibleFeatures> {
        let probs = self.probs(theta)?;
        Ok(self.features_from_probs(&probs))
    }

    pub(crate) fn features_from_probs(&self, probs: &PolicyTable) -> CompatibleFeatures {
        let (ns, na, np) = (self.n_states, self.n_actions, self.n_params);
        let mut data = vec![0.0; ns * na * np];
        for s in 0..ns {
            // Σ_b π(s,b) e_{slot(s,b)}
            let mut mean = vec![0.0; np];
            for b in 0..na {
                if let Some(k) = self.slot(s, b) {
                    mean[k] += probs[(s, b)];
                }
            }
            for a in 0..na {
                let psi = &mut data[(s * na + a) * np..(s * na + a + 1) * np];
                for (k, m) in mean.iter().enumerate() {
                    psi[k] = -m;
                }
                if let Some(k) = self.slot(s, a) {
                    psi[k] += 1.0;
                }
            }
        }
        CompatibleFeatures {
            n_actions: na,
            n_params: np,
            data,
        }
    }
}

/// Dense `ψ` table, laid out `[s][a][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleFeatures {
    n_actions: usize,
    n_params: usize,
    data: Vec<f64>,
}

impl CompatibleFeatures {
    #[inline]
    pub fn get(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_params;
        &self.data[start..start + self.n_params]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigmoid;
    use proptest::prelude::*;

    fn two_state_sigmoid() -> Policy {
        Policy::sigmoid(3, &[Some(0), Some(1), None]).unwrap()
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let p = two_state_sigmoid();
        let pi = p.probs(&[0.0, 0.0]).unwrap();
        assert_eq!(pi[(0, 0)], 0.5);
        assert_eq!(pi[(0, 1)], 0.5);
    }

    #[test]
    fn sigmoid_matches_logistic() {
        let p = two_state_sigmoid();
        let pi = p.probs(&[1.3, -0.4]).unwrap();
        assert!((pi[(0, 0)] - sigmoid(1.3)).abs() < 1e-15);
        assert!((pi[(1, 1)] - (1.0 - sigmoid(-0.4))).abs() < 1e-15);
        assert_eq!(p.kind(), PolicyKind::TabularSigmoid);
    }

    #[test]
    fn repeated_index_is_tied() {
        let p = Policy::sigmoid(3, &[Some(0), Some(0), None]).unwrap();
        assert_eq!(p.kind(), PolicyKind::Tied);
        assert_eq!(p.n_params(), 1);
        let pi = p.probs(&[0.8]).unwrap();
        assert_eq!(pi[(0, 0)], pi[(1, 0)]);
    }

    #[test]
    fn equal_logits_are_uniform() {
        let m = TabularMdp::skeleton(&["s1", "sInf"], &["a", "b", "c"], "sInf", 0.9).unwrap();
        let p = Policy::softmax(&m);
        let pi = p.probs(&[2.0, 2.0, 2.0]).unwrap();
        for a in 0..3 {
            assert!((pi[(0, a)] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_features_at_zero() {
        let p = two_state_sigmoid();
        let psi = p.features(&[0.0, 0.0]).unwrap();
        assert_eq!(psi.get(0, 0), &[0.5, 0.0]);
        assert_eq!(psi.get(0, 1), &[-0.5, 0.0]);
    }

    #[test]
    fn wrong_theta_length() {
        let p = two_state_sigmoid();
        assert!(matches!(p.probs(&[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(p.features(&[0.0; 3]), Err(Error::Dimension { .. })));
    }

    fn random_policy() -> impl Strategy<Value = (Policy, Vec<f64>)> {
        (1usize..5, 2usize..5, any::<bool>(), any::<u64>()).prop_flat_map(|(n, na, tie, salt)| {
            let ns = n + 1;
            let mut slots = vec![None; ns * na];
            let mut k = 0;
            for s in 0..n {
                for a in 0..na {
                    // skip some slots, optionally tie across states
                    if (salt >> ((s * na + a) % 60)) & 1 == 1 || a == 0 {
                        slots[s * na + a] = Some(if tie { a } else { k });
                        k += 1;
                    }
                }
            }
            let policy = Policy::from_slots(PolicyKind::TabularSoftmax, ns, na, slots).unwrap();
            let np = policy.n_params();
            (Just(policy), prop::collection::vec(-5.0f64..5.0, np))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rows_normalised_and_score_identity((policy, theta) in random_policy()) {
            let pi = policy.probs(&theta).unwrap();
            let psi = policy.features(&theta).unwrap();
            for s in 0..policy.n_states() {
                let row: f64 = (0..policy.n_actions()).map(|a| pi[(s, a)]).sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
                for k in 0..policy.n_params() {
                    let m: f64 = (0..policy.n_actions()).map(|a| pi[(s, a)] * psi.get(s, a)[k]).sum();
                    prop_assert!(m.abs() < 1e-10);
                }
                for a in 0..policy.n_actions() {
                    prop_assert!(pi[(s, a)] > 0.0);
                }
            }
        }

        #[test]
        fn features_match_log_prob_differences((policy, theta) in random_policy()) {
            let h = 1e-5;
            let psi = policy.features(&theta).unwrap();
            for k in 0..policy.n_params() {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let pu = policy.probs(&up).unwrap();
                let pd = policy.probs(&dn).unwrap();
                for s in 0..policy.n_states() {
                    for a in 0..policy.n_actions() {
                        let fd = (pu[(s, a)].ln() - pd[(s, a)].ln()) / (2.0 * h);
                        prop_assert!((fd - psi.get(s, a)[k]).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
