//! Exact analysis of policy-gradient update directions on finite episodic MDPs.
//!
//! The crate computes three vector fields over policy parameters:
//!
//! * the true gradient of the discounted objective `J_γ`,
//! * the gradient of the undiscounted objective `J`,
//! * the "biased" update `∇J?` that drops the `γ^t` weighting on the state
//!   distribution, as most practical policy-gradient implementations do.
//!
//! Every quantity is obtained from dense linear solves on the transient part
//! of the MDP, so results are exact up to floating-point round-off. The
//! [`diagnostics`] module certifies (non-)conservativeness of a field through
//! Jacobian symmetry and loop circulation, [`dynamics`] integrates fixed-step
//! ascent along a field, and [`sampling`] provides Monte Carlo estimators.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod gallery;
pub mod mdp;
pub mod policy;
pub mod sampling;
pub mod solvers;

pub use error::{Error, Result};
pub use fields::{FieldForm, FieldKind, ParameterField, VectorField};
pub use mdp::{TabularMdp, ValidationReport};
pub use policy::Policy;

/// Logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First derivative of [`sigmoid`].
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Second derivative of [`sigmoid`].
#[inline]
pub fn sigmoid_second(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (1.0 - 2.0 * s)
}
