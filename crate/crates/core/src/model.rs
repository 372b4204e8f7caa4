//! Slow-fast vector fields and the geometry of the critical manifold.
//!
//! The critical manifold `W = {F(x, y) = 0}` of the van der Pol field
//! `F = x - x^3/3 + y` splits into an attracting left branch `W-`
//! (`x < -1`), a repelling middle branch `W0` (`|x| <= 1`) and an
//! attracting right branch `W+` (`x > 1`). The fold points
//! `(-1, 2/3)` and `(1, -2/3)` join them. Each branch is the graph of
//! a root of the cubic `x^3 - 3x - 3y = 0`, selected by its x-range.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Scalar field `R^2 -> R` used for the components of a planar system.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A planar singularly perturbed system `eps * dx/dtau = F`, `dy/dtau = G`.
///
/// The built-in instance is the van der Pol oscillator
/// (`F = x - x^3/3 + y`, `G = -x`); arbitrary `F`, `G` are supported for
/// vector-field evaluation and integration. The manifold-geometry
/// operations in this module ([`gamma`], [`classify_region`],
/// [`project_pi`]) are specific to the van der Pol instance.
#[derive(Clone)]
pub struct SlowFastSystem {
    f: ScalarFn,
    g: ScalarFn,
    /// Time-scale separation parameter; positive.
    pub epsilon: f64,
}

impl SlowFastSystem {
    pub fn new(f: ScalarFn, g: ScalarFn, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be a positive finite number, got {epsilon}"
            )));
        }
        Ok(Self { f, g, epsilon })
    }

    /// The van der Pol oscillator with the given time-scale parameter.
    pub fn van_der_pol(epsilon: f64) -> Result<Self> {
        Self::new(
            Arc::new(|x: f64, y: f64| x - x * x * x / 3.0 + y),
            Arc::new(|x: f64, _y: f64| -x),
            epsilon,
        )
    }

    /// Same system with a different `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.f.clone(), self.g.clone(), epsilon)
    }

    #[inline]
    pub fn f(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    #[inline]
    pub fn g(&self, x: f64, y: f64) -> f64 {
        (self.g)(x, y)
    }
}

impl fmt::Debug for SlowFastSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowFastSystem")
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

/// A point of the state plane; `x` is the fast variable, `y` the slow one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Euclidean distance to another point.
    pub fn distance(&self, other: State) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Which clock a duration or trajectory is expressed in. The scales are
/// related by `tau = eps * t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeScale {
    /// Fast time `t`.
    Fast,
    /// Slow time `tau`.
    Slow,
}

/// Branches of the critical manifold `F(x, y) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldBranch {
    /// Attracting branch with `x < -1`, graph over `y < 2/3`.
    WMinus,
    /// Repelling branch with `|x| <= 1`, graph over `|y| <= 2/3`.
    WZero,
    /// Attracting branch with `x > 1`, graph over `y > -2/3`.
    WPlus,
}

/// The two attracting branches, i.e. the state space of the constrained
/// (slow-subsystem) flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttractingBranch {
    WMinus,
    WPlus,
}

impl AttractingBranch {
    /// `+1` on `W+`, `-1` on `W-`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            AttractingBranch::WMinus => -1.0,
            AttractingBranch::WPlus => 1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 {
            AttractingBranch::WPlus
        } else {
            AttractingBranch::WMinus
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            AttractingBranch::WMinus => AttractingBranch::WPlus,
            AttractingBranch::WPlus => AttractingBranch::WMinus,
        }
    }
}

impl From<AttractingBranch> for ManifoldBranch {
    fn from(b: AttractingBranch) -> Self {
        match b {
            AttractingBranch::WMinus => ManifoldBranch::WMinus,
            AttractingBranch::WPlus => ManifoldBranch::WPlus,
        }
    }
}

/// Region of the plane relative to the repelling branch and the half-lines
/// that extend it; determines which attracting branch the layer dynamics
/// selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    DMinus,
    DPlus,
    OnW0,
}

/// A point of the constrained-flow state space `W- U W+`, stored by its
/// x-coordinate. The y-coordinate is always recomputed from
/// `y = x^3/3 - x`, never stored.
///
/// `|xbar| = 1` denotes the fold point of the branch; it is admitted as a
/// boundary value (the constrained flow jumps away from it immediately).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedState {
    pub branch: AttractingBranch,
    pub xbar: f64,
}

impl ConstrainedState {
    pub fn new(branch: AttractingBranch, xbar: f64) -> Result<Self> {
        if !xbar.is_finite() {
            return Err(Error::NonFiniteState { x: xbar, y: f64::NAN });
        }
        let ok = match branch {
            AttractingBranch::WPlus => xbar >= 1.0,
            AttractingBranch::WMinus => xbar <= -1.0,
        };
        if !ok {
            return Err(Error::domain(
                "constrained state",
                format!("xbar = {xbar} is not on branch {branch:?}"),
            ));
        }
        Ok(Self { branch, xbar })
    }

    /// `y = x^3/3 - x` on the manifold.
    #[inline]
    pub fn ybar(&self) -> f64 {
        self.xbar * self.xbar * self.xbar / 3.0 - self.xbar
    }

    pub fn as_state(&self) -> State {
        State::new(self.xbar, self.ybar())
    }
}

/// Half-width of the band around `W0` treated as "on W0" by
/// [`classify_region`]. The projection is undefined on a measure-zero
/// set; the band is kept tight so grid points are not spuriously rejected.
pub const TOL_W0: f64 = 1e-9;

/// Vector field of the chosen time-scale form.
///
/// Fast scale: `(F, eps*G)`. Slow scale: `(F/eps, G)`.
pub fn eval_vector_field(sys: &SlowFastSystem, s: State, scale: TimeScale) -> Result<(f64, f64)> {
    if !s.is_finite() {
        return Err(Error::NonFiniteState { x: s.x, y: s.y });
    }
    let f = sys.f(s.x, s.y);
    let g = sys.g(s.x, s.y);
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::NonFiniteEval { x: s.x, y: s.y });
    }
    Ok(match scale {
        TimeScale::Fast => (f, sys.epsilon * g),
        TimeScale::Slow => (f / sys.epsilon, g),
    })
}

const TWO_THIRDS: f64 = 2.0 / 3.0;

/// Graph `x = gamma_branch(y)` of a branch of the critical manifold.
///
/// Solves `x^3 - 3x - 3y = 0` by the trigonometric (three-real-roots) or
/// hyperbolic (single-root) closed form, selecting the root in the
/// branch's x-range, then polishes with one Newton step. Branch domains
/// are closed at the fold rows, where the graph takes the fold value
/// `+-1` (for `WMinus`/`WZero` at `y = +-2/3`) or the drop value `+-2`.
pub fn gamma(branch: ManifoldBranch, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::domain("gamma", format!("y = {y} is not finite")));
    }
    let in_domain = match branch {
        ManifoldBranch::WMinus => y <= TWO_THIRDS,
        ManifoldBranch::WZero => y.abs() <= TWO_THIRDS,
        ManifoldBranch::WPlus => y >= -TWO_THIRDS,
    };
    if !in_domain {
        return Err(Error::domain(
            "gamma",
            format!("y = {y} is outside the domain of branch {branch:?}"),
        ));
    }

    let x = if y.abs() <= TWO_THIRDS {
        // Three real roots: x_k = 2 cos(alpha/3 - 2 pi k / 3), alpha = acos(3y/2).
        let alpha = (1.5 * y).clamp(-1.0, 1.0).acos();
        let k = match branch {
            ManifoldBranch::WPlus => 0.0,
            ManifoldBranch::WZero => 1.0,
            ManifoldBranch::WMinus => 2.0,
        };
        2.0 * (alpha / 3.0 - 2.0 * std::f64::consts::PI * k / 3.0).cos()
    } else {
        // Single real root: x = sgn(y) * 2 cosh(acosh(3|y|/2) / 3).
        y.signum() * 2.0 * ((1.5 * y.abs()).acosh() / 3.0).cosh()
    };

    // One Newton step on x^3 - 3x - 3y; skipped near the folds where the
    // derivative vanishes (the closed form is exact there).
    let fp = 3.0 * x * x - 3.0;
    let x = if fp.abs() > 1e-8 {
        x - (x * x * x - 3.0 * x - 3.0 * y) / fp
    } else {
        x
    };
    Ok(x)
}

/// Side of the repelling branch a point lies on.
///
/// `DPlus` collects the basin of `W+` under the layer dynamics
/// (`x > gamma_0(y)` inside the fold strip, or `y > 2/3`), `DMinus` the
/// basin of `W-`. Points within [`TOL_W0`] of `W0` classify as `OnW0`.
pub fn classify_region(s: State) -> Region {
    if s.y.abs() <= TWO_THIRDS {
        let g0 = gamma(ManifoldBranch::WZero, s.y).expect("y in W0 domain");
        if (s.x - g0).abs() <= TOL_W0 {
            Region::OnW0
        } else if s.x > g0 {
            Region::DPlus
        } else {
            Region::DMinus
        }
    } else if s.y > TWO_THIRDS {
        Region::DPlus
    } else {
        Region::DMinus
    }
}

/// Projection along constant `y` onto the attracting branch of the
/// point's region — the singular limit of the fast flow over one slow
/// instant. Undefined on `W0`.
///
/// On the boundary rows `y = +-2/3` the half-lines beyond the folds
/// project to the fold points themselves (`gamma` at the closed domain
/// endpoint), from which the constrained flow jumps immediately.
pub fn project_pi(s: State) -> Result<ConstrainedState> {
    if !s.is_finite() {
        return Err(Error::NonFiniteState { x: s.x, y: s.y });
    }
    match classify_region(s) {
        Region::OnW0 => Err(Error::ProjectionUndefined { x: s.x, y: s.y }),
        Region::DPlus => ConstrainedState::new(
            AttractingBranch::WPlus,
            gamma(ManifoldBranch::WPlus, s.y)?,
        ),
        Region::DMinus => ConstrainedState::new(
            AttractingBranch::WMinus,
            gamma(ManifoldBranch::WMinus, s.y)?,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent root oracle: bisection on x^3 - 3x - 3y over a bracket.
    fn bisect_root(y: f64, mut lo: f64, mut hi: f64) -> f64 {
        let f = |x: f64| x * x * x - 3.0 * x - 3.0 * y;
        assert!(f(lo) * f(hi) <= 0.0, "no sign change in bracket");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn vector_field_examples() {
        let vdp = SlowFastSystem::van_der_pol(1.0).unwrap();
        let (dx, dy) = eval_vector_field(&vdp, State::new(0.0, 0.0), TimeScale::Fast).unwrap();
        assert_eq!((dx, dy), (0.0, 0.0));

        let vdp = SlowFastSystem::van_der_pol(0.1).unwrap();
        let (dx, dy) =
            eval_vector_field(&vdp, State::new(2.0, 2.0 / 3.0), TimeScale::Fast).unwrap();
        assert_abs_diff_eq!(dx, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dy, -0.2, epsilon = 1e-15);

        let vdp = SlowFastSystem::van_der_pol(0.01).unwrap();
        let (dx, dy) = eval_vector_field(&vdp, State::new(1.0, 0.0), TimeScale::Slow).unwrap();
        assert_abs_diff_eq!(dx, (1.0 - 1.0 / 3.0) / 0.01, epsilon = 1e-10);
        assert_abs_diff_eq!(dy, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn vector_field_rejects_nonfinite() {
        let vdp = SlowFastSystem::van_der_pol(1.0).unwrap();
        let err = eval_vector_field(&vdp, State::new(f64::NAN, 0.0), TimeScale::Fast);
        assert!(err.is_err());

        let bad = SlowFastSystem::new(
            Arc::new(|_x, _y| f64::INFINITY),
            Arc::new(|_x, _y| 0.0),
            1.0,
        )
        .unwrap();
        match eval_vector_field(&bad, State::new(1.0, 2.0), TimeScale::Fast) {
            Err(Error::NonFiniteEval { x, y }) => {
                assert_eq!((x, y), (1.0, 2.0));
            }
            other => panic!("expected NonFiniteEval, got {other:?}"),
        }
    }

    #[test]
    fn gamma_fold_and_fixed_values() {
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WPlus, TWO_THIRDS).unwrap(),
            2.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WZero, TWO_THIRDS).unwrap(),
            -1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WMinus, -TWO_THIRDS).unwrap(),
            -2.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WZero, 0.0).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        // Right branch at y = 0: root of x^3 - 3x = 0 with x > 1.
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WPlus, 0.0).unwrap(),
            3.0_f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn gamma_matches_bisection_oracle() {
        // Frozen value from the oracle: root of x^3 - 3x - 6 = 0 in (2, 3).
        let oracle = bisect_root(2.0, 2.0, 3.0);
        assert_abs_diff_eq!(oracle, 2.355301397608, epsilon = 1e-9);
        assert_abs_diff_eq!(
            gamma(ManifoldBranch::WPlus, 2.0).unwrap(),
            oracle,
            epsilon = 1e-12
        );

        // A few more spot checks across all branches.
        for &(branch, y, lo, hi) in &[
            (ManifoldBranch::WPlus, 5.0, 2.0, 4.0),
            (ManifoldBranch::WPlus, 0.3, 1.0, 2.0),
            (ManifoldBranch::WMinus, -3.0, -4.0, -2.0),
            (ManifoldBranch::WMinus, 0.5, -2.0, -1.0),
            (ManifoldBranch::WZero, 0.41, -1.0, 0.0),
            (ManifoldBranch::WZero, -0.55, 0.0, 1.0),
        ] {
            let oracle = bisect_root(y, lo, hi);
            assert_abs_diff_eq!(gamma(branch, y).unwrap(), oracle, epsilon = 1e-11);
        }
    }

    #[test]
    fn gamma_domain_errors() {
        assert!(gamma(ManifoldBranch::WPlus, -0.7).is_err());
        assert!(gamma(ManifoldBranch::WMinus, 0.7).is_err());
        assert!(gamma(ManifoldBranch::WZero, 0.7).is_err());
        assert!(gamma(ManifoldBranch::WZero, f64::NAN).is_err());
    }

    #[test]
    fn gamma_residual_and_ranges() {
        // |F(gamma(y), y)| < 1e-12 over 1000 samples of each branch domain,
        // and the roots stay in their branch x-ranges.
        let vdp = SlowFastSystem::van_der_pol(1.0).unwrap();
        for i in 0..1000 {
            let u = (i as f64 + 0.5) / 1000.0;

            let y = TWO_THIRDS - 6.0 * u; // WMinus: y in (-16/3, 2/3)
            let x = gamma(ManifoldBranch::WMinus, y).unwrap();
            assert!(vdp.f(x, y).abs() < 1e-12, "W- residual at y = {y}");
            assert!(x < -1.0 || (x + 1.0).abs() < 1e-12);

            let y = -TWO_THIRDS + 6.0 * u; // WPlus
            let x = gamma(ManifoldBranch::WPlus, y).unwrap();
            assert!(vdp.f(x, y).abs() < 1e-12, "W+ residual at y = {y}");
            assert!(x > 1.0 || (x - 1.0).abs() < 1e-12);

            let y = -TWO_THIRDS + 2.0 * TWO_THIRDS * u; // WZero
            let x = gamma(ManifoldBranch::WZero, y).unwrap();
            assert!(vdp.f(x, y).abs() < 1e-12, "W0 residual at y = {y}");
            assert!(x.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_region(State::new(-3.8, 2.0)), Region::DPlus);
        assert_eq!(classify_region(State::new(0.0, 0.0)), Region::OnW0);
        assert_eq!(classify_region(State::new(-3.0, 0.0)), Region::DMinus);
        // Half-lines beyond the folds on the boundary rows.
        assert_eq!(classify_region(State::new(-3.0, TWO_THIRDS)), Region::DMinus);
        assert_eq!(classify_region(State::new(3.0, -TWO_THIRDS)), Region::DPlus);
    }

    #[test]
    fn project_examples() {
        let p = project_pi(State::new(-3.8, 2.0)).unwrap();
        assert_eq!(p.branch, AttractingBranch::WPlus);
        assert_abs_diff_eq!(p.xbar, bisect_root(2.0, 2.0, 3.0), epsilon = 1e-12);

        let p = project_pi(State::new(2.0, TWO_THIRDS)).unwrap();
        assert_eq!(p.branch, AttractingBranch::WPlus);
        assert_abs_diff_eq!(p.xbar, 2.0, epsilon = 1e-14);

        assert!(matches!(
            project_pi(State::new(0.0, 0.0)),
            Err(Error::ProjectionUndefined { .. })
        ));

        // Half-line left of the fold on y = 2/3 projects to the fold point.
        let p = project_pi(State::new(-3.0, TWO_THIRDS)).unwrap();
        assert_eq!(p.branch, AttractingBranch::WMinus);
        assert_abs_diff_eq!(p.xbar, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.ybar(), TWO_THIRDS, epsilon = 1e-14);
    }

    #[test]
    fn constrained_state_invariants() {
        assert!(ConstrainedState::new(AttractingBranch::WPlus, 2.0).is_ok());
        assert!(ConstrainedState::new(AttractingBranch::WPlus, 1.0).is_ok());
        assert!(ConstrainedState::new(AttractingBranch::WPlus, 0.5).is_err());
        assert!(ConstrainedState::new(AttractingBranch::WMinus, -1.0).is_ok());
        assert!(ConstrainedState::new(AttractingBranch::WMinus, 0.0).is_err());
        let cs = ConstrainedState::new(AttractingBranch::WPlus, 2.0).unwrap();
        assert_abs_diff_eq!(cs.ybar(), TWO_THIRDS, epsilon = 1e-15);
    }
}
