//! Conservativeness certificates for parameter fields.
//!
//! A `C²` gradient field has a symmetric Jacobian and zero circulation around
//! every closed loop. Both are measured here; neither is collapsed into a bare
//! yes/no answer, reports always carry the measured defect and the threshold
//! it was compared against.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::{sigmoid, sigmoid_prime, sigmoid_second};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

pub const MIN_CIRCULATION_STEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum JacobianMethod {
    Analytic,
    FiniteDifference { h: f64 },
}

impl JacobianMethod {
    pub fn name(&self) -> &'static str {
        match self {
            JacobianMethod::Analytic => "analytic",
            JacobianMethod::FiniteDifference { .. } => "finite-difference",
        }
    }

    pub fn step(&self) -> Option<f64> {
        match self {
            JacobianMethod::Analytic => None,
            JacobianMethod::FiniteDifference { h } => Some(*h),
        }
    }
}

impl Default for JacobianMethod {
    fn default() -> Self {
        JacobianMethod::FiniteDifference { h: DEFAULT_STEP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub field: String,
    pub theta: Vec<f64>,
    pub method: JacobianMethod,
    /// `jacobian[i][j] = ∂F_i/∂θ_j`.
    pub jacobian: Vec<Vec<f64>>,
    /// `max |J − Jᵀ|`.
    pub defect: f64,
}

impl SymmetryReport {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.jacobian[i][j]
    }
}

pub fn jacobian(field: &dyn VectorField, theta: &[f64], method: JacobianMethod) -> Result<SymmetryReport> {
    let n = field.dim();
    if theta.len() != n {
        return Err(Error::dim("theta", n, theta.len()));
    }
    let jac = match method {
        JacobianMethod::Analytic => field.analytic_jacobian(theta).ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no analytic Jacobian", field.label()))
        })??,
        JacobianMethod::FiniteDifference { h } => finite_difference_jacobian(field, theta, h)?,
    };
    let defect = symmetry_defect(&jac);
    Ok(SymmetryReport {
        field: field.label(),
        theta: theta.to_vec(),
        method,
        jacobian: jac.row_iter().map(|r| r.iter().copied().collect()).collect(),
        defect,
    })
}

/// Central differences, column `j` from `F(θ ± h e_j)`.
pub fn finite_difference_jacobian(field: &dyn VectorField, theta: &[f64], h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let n = theta.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = theta.to_vec();
    for j in 0..n {
        probe[j] = theta[j] + h;
        let up = field.eval(&probe)?;
        probe[j] = theta[j] - h;
        let down = field.eval(&probe)?;
        probe[j] = theta[j];
        for i in 0..n {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

pub fn symmetry_defect(jac: &DMatrix<f64>) -> f64 {
    let n = jac.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((jac[(i, j)] - jac[(j, i)]).abs());
        }
    }
    worst
}

/// The two mixed partials of the two-state biased field in closed form:
/// `(∂/∂θ2 ∂J?/∂θ1, ∂/∂θ1 ∂J?/∂θ2) = (γ σ′(θ1) σ′(θ2), σ′(θ1) σ′(θ2))`.
pub fn figure1_mixed_partials(theta: [f64; 2], gamma: f64) -> (f64, f64) {
    let prod = sigmoid_prime(theta[0]) * sigmoid_prime(theta[1]);
    (gamma * prod, prod)
}

/// The biased field of the two-decision-state example written out by hand,
/// with its exact Jacobian. Used as an independent reference.
#[derive(Debug, Clone, Copy)]
pub struct Figure1BiasedClosedForm {
    pub gamma: f64,
}

impl VectorField for Figure1BiasedClosedForm {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != 2 {
            return Err(Error::dim("theta", 2, theta.len()));
        }
        let (t1, t2) = (theta[0], theta[1]);
        Ok(vec![
            self.gamma * sigmoid(t2) * sigmoid_prime(t1),
            sigmoid(t1) * sigmoid_prime(t2),
        ])
    }

    fn analytic_jacobian(&self, theta: &[f64]) -> Option<Result<DMatrix<f64>>> {
        if theta.len() != 2 {
            return Some(Err(Error::dim("theta", 2, theta.len())));
        }
        let (t1, t2) = (theta[0], theta[1]);
        let (mixed_12, mixed_21) = figure1_mixed_partials([t1, t2], self.gamma);
        Some(Ok(DMatrix::from_row_slice(
            2,
            2,
            &[
                self.gamma * sigmoid(t2) * sigmoid_second(t1),
                mixed_12,
                mixed_21,
                sigmoid(t1) * sigmoid_second(t2),
            ],
        )))
    }

    fn label(&self) -> String {
        format!("figure1_biased_closed_form(gamma={})", self.gamma)
    }
}

// ---------------------------------------------------------------------------
// Circulation

/// Axis-aligned rectangle `[lo_i, hi_i] × [lo_j, hi_j]` in the `(θ_i, θ_j)`
/// slice through `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub base: Vec<f64>,
    pub axes: (usize, usize),
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rectangle {
    /// `[a1, b1] × [a2, b2]` in the first two coordinates of a 2-parameter field.
    pub fn plane(a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        Self {
            base: vec![0.0, 0.0],
            axes: (0, 1),
            lo: [a1, a2],
            hi: [b1, b2],
        }
    }

    /// Corners as full parameter vectors, ordered so that the loop integral
    /// equals `∬ (∂F_i/∂θ_j − ∂F_j/∂θ_i)` over the rectangle. In the
    /// `(θ_j, θ_i)` plane this is the counterclockwise order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let (i, j) = self.axes;
        [
            (self.lo[0], self.lo[1]),
            (self.lo[0], self.hi[1]),
            (self.hi[0], self.hi[1]),
            (self.hi[0], self.lo[1]),
        ]
        .into_iter()
        .map(|(x, y)| {
            let mut p = self.base.clone();
            p[i] = x;
            p[j] = y;
            p
        })
        .collect()
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CirculationReport {
    pub field: String,
    pub path: Vec<Vec<f64>>,
    /// Trapezoid value on the fine grid (`2 × steps` per edge).
    pub value: f64,
    /// Trapezoid value on the coarse grid (`steps` per edge).
    pub coarse_value: f64,
    /// Richardson extrapolation of the two.
    pub extrapolated: f64,
    /// `|fine − coarse|` plus a round-off floor; bounds the error of `value`
    /// once the trapezoid rule is in its asymptotic regime.
    pub error_bound: f64,
    pub steps: usize,
}

/// Counterclockwise line integral `∮ F · dθ` around a rectangle.
pub fn circulation(field: &dyn VectorField, rect: &Rectangle, steps: usize) -> Result<CirculationReport> {
    let n = field.dim();
    let (i, j) = rect.axes;
    if rect.base.len() != n {
        return Err(Error::dim("rectangle base", n, rect.base.len()));
    }
    if i >= n || j >= n || i == j {
        return Err(Error::InvalidArgument(format!("bad slice axes ({i}, {j}) for dimension {n}")));
    }
    let mut path = rect.corners();
    path.push(path[0].clone());
    let mut report = circulation_polyline(field, &path, steps)?;
    report.path.pop();
    Ok(report)
}

/// Line integral along a closed polyline (first vertex repeated at the end),
/// composite trapezoid with `steps` and `2·steps` subintervals per segment.
pub fn circulation_polyline(field: &dyn VectorField, path: &[Vec<f64>], steps: usize) -> Result<CirculationReport> {
    if steps < MIN_CIRCULATION_STEPS {
        return Err(Error::InvalidArgument(format!(
            "circulation needs at least {MIN_CIRCULATION_STEPS} steps, got {steps}"
        )));
    }
    if path.len() < 3 || path.first() != path.last() {
        return Err(Error::InvalidArgument("path must be closed with at least two segments".into()));
    }
    let n = field.dim();
    if let Some(bad) = path.iter().find(|p| p.len() != n) {
        return Err(Error::dim("path vertex", n, bad.len()));
    }
    let (coarse, _) = polyline_trapezoid(field, path, steps)?;
    let (fine, magnitude) = polyline_trapezoid(field, path, 2 * steps)?;
    let round_off = 64.0 * f64::EPSILON * magnitude;
    Ok(CirculationReport {
        field: field.label(),
        path: path.to_vec(),
        value: fine,
        coarse_value: coarse,
        extrapolated: fine + (fine - coarse) / 3.0,
        error_bound: (fine - coarse).abs() + round_off,
        steps,
    })
}

/// Returns the integral and the sum of absolute contributions.
fn polyline_trapezoid(field: &dyn VectorField, path: &[Vec<f64>], steps: usize) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut magnitude = 0.0;
    let mut point = vec![0.0; path[0].len()];
    for seg in path.windows(2) {
        let (start, end) = (&seg[0], &seg[1]);
        let delta: Vec<f64> = start.iter().zip(end).map(|(a, b)| b - a).collect();
        let mut seg_sum = 0.0;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            for (p, (s, d)) in point.iter_mut().zip(start.iter().zip(&delta)) {
                *p = s + t * d;
            }
            let f = field.eval(&point)?;
            let dot: f64 = f.iter().zip(&delta).map(|(f, d)| f * d).sum();
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            seg_sum += w * dot;
            magnitude += (w * dot).abs() / steps as f64;
        }
        total += seg_sum / steps as f64;
    }
    Ok((total, magnitude))
}

// ---------------------------------------------------------------------------
// Certificate

/// Thresholds a field must stay under to be reported as consistent with a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub symmetry: f64,
    /// Multiplier on the circulation error bound.
    pub circulation_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            symmetry: 1e-6,
            circulation_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCertificate {
    pub symmetry: SymmetryReport,
    pub circulation: Option<CirculationReport>,
    pub thresholds: Thresholds,
    /// Symmetry defect under threshold and (when measured) circulation
    /// within `circulation_factor × error_bound`.
    pub consistent_with_gradient: bool,
}

pub fn certify(
    field: &dyn VectorField,
    theta: &[f64],
    method: JacobianMethod,
    loop_rect: Option<(&Rectangle, usize)>,
    thresholds: Thresholds,
) -> Result<GradientCertificate> {
    let symmetry = jacobian(field, theta, method)?;
    let circulation = loop_rect.map(|(r, steps)| circulation(field, r, steps)).transpose()?;
    let loop_ok = circulation
        .as_ref()
        .is_none_or(|c| c.value.abs() <= thresholds.circulation_factor * c.error_bound);
    Ok(GradientCertificate {
        consistent_with_gradient: symmetry.defect < thresholds.symmetry && loop_ok,
        symmetry,
        circulation,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ∇(x² y + sin y)
    struct Potential;
    impl VectorField for Potential {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![2.0 * t[0] * t[1], t[0] * t[0] + t[1].cos()])
        }
        fn label(&self) -> String {
            "potential".into()
        }
    }

    /// Rotation field (-y, x): curl 2 everywhere.
    struct Rotation;
    impl VectorField for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, t: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![-t[1], t[0]])
        }
        fn label(&self) -> String {
            "rotation".into()
        }
    }

    #[test]
    fn gradient_field_is_symmetric() {
        let r = jacobian(&Potential, &[0.3, -1.2], JacobianMethod::default()).unwrap();
        assert!(r.defect < 1e-8);
        assert!((r.entry(0, 1) - 0.6).abs() < 1e-8);
    }

    #[test]
    fn rotation_has_circulation_minus_twice_area() {
        let c = circulation(&Rotation, &Rectangle::plane(-1.0, 2.0, 0.0, 1.0), 16).unwrap();
        assert!((c.value + 6.0).abs() < 1e-12);
        let sym = jacobian(&Rotation, &[0.0, 0.0], JacobianMethod::default()).unwrap();
        assert!((sym.defect - 2.0).abs() < 1e-9);
    }

    #[test]
    fn potential_loop_is_within_bound() {
        let c = circulation(&Potential, &Rectangle::plane(-1.0, 1.0, -1.0, 1.0), 16).unwrap();
        assert!(c.value.abs() <= c.error_bound, "{c:?}");
    }

    #[test]
    fn closed_form_mixed_partials() {
        assert_eq!(figure1_mixed_partials([0.0, 0.0], 0.0), (0.0, 0.0625));
        assert_eq!(figure1_mixed_partials([0.0, 0.0], 1.0), (0.0625, 0.0625));
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let f = Figure1BiasedClosedForm { gamma: 0.3 };
        let a = jacobian(&f, &[0.2, -0.5], JacobianMethod::Analytic).unwrap();
        let d = jacobian(&f, &[0.2, -0.5], JacobianMethod::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.entry(i, j) - d.entry(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn argument_errors() {
        assert!(jacobian(&Potential, &[0.0], JacobianMethod::default()).is_err());
        assert!(jacobian(&Potential, &[0.0, 0.0], JacobianMethod::Analytic).is_err());
        assert!(jacobian(&Potential, &[0.0, 0.0], JacobianMethod::FiniteDifference { h: 0.0 }).is_err());
        assert!(circulation(&Potential, &Rectangle::plane(0.0, 1.0, 0.0, 1.0), 8).is_err());
    }

    #[test]
    fn certificate_separates_fields() {
        let rect = Rectangle::plane(-1.0, 1.0, -1.0, 1.0);
        let good = certify(&Potential, &[0.1, 0.2], JacobianMethod::default(), Some((&rect, 32)), Thresholds::default())
            .unwrap();
        assert!(good.consistent_with_gradient);
        let bad = certify(&Rotation, &[0.1, 0.2], JacobianMethod::default(), Some((&rect, 32)), Thresholds::default())
            .unwrap();
        assert!(!bad.consistent_with_gradient);
    }
}
