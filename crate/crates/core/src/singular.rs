//! The singular limit: constrained flow on the attracting branches, layer
//! (fast-subsystem) flow, their concatenation, and the closed-form
//! eigenfunctions of the limiting Koopman operators.
//!
//! On `W+` the slow subsystem reduces to the scalar ODE
//! `dx/dtau = -x / (x^2 - 1)`, solved in closed form through
//! `varphi(x) = ln x - x^2 / 2`: the solution slides along
//! `x(tau) = varphi^{-1}(varphi(x0) + tau)` until it reaches the fold
//! point `x = 1` at `tau_s = varphi(1) - varphi(x0)`, then jumps
//! discontinuously to the drop point `(-2, -2/3)` on the opposite branch
//! and repeats, with half-period `T0/2 = 3/2 - ln 2` per branch segment.
//! The flow is right-continuous at jump instants and `T0`-periodic once
//! past `tau_s`.
//!
//! Each post-jump segment restarts the closed form at its own drop point
//! with a segment-local time offset; this places the state exactly at the
//! drop point at each jump instant and makes the periodicity exact.

use crate::error::{Error, Result};
use crate::model::{
    classify_region, gamma, AttractingBranch, ConstrainedState, ManifoldBranch, Region,
    SlowFastSystem, State,
};
use crate::ode::{integrate_dense, IntegratorConfig, Rhs};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::LN_2;
use std::sync::Arc;

/// Constants of the singular limit, computed from exact expressions.
pub mod constants {
    use super::LN_2;
    use crate::model::State;

    /// Period of the singular relaxation oscillation, `3 - 2 ln 2`.
    pub fn t0() -> f64 {
        3.0 - 2.0 * LN_2
    }

    /// Half period, `3/2 - ln 2`: the drop-point-to-fold transit time.
    pub fn half_t0() -> f64 {
        1.5 - LN_2
    }

    /// Fundamental angular frequency `2 pi / T0`.
    pub fn omega0() -> f64 {
        2.0 * std::f64::consts::PI / t0()
    }

    /// Limit of the scaled Floquet exponent, `(-3/2 - 2 ln 2) / T0`.
    pub fn nu0() -> f64 {
        (-1.5 - 2.0 * LN_2) / t0()
    }

    /// Fold (jump) points `(-1, 2/3)` and `(1, -2/3)`.
    pub fn jump_points() -> [State; 2] {
        [State::new(-1.0, 2.0 / 3.0), State::new(1.0, -2.0 / 3.0)]
    }

    /// Drop points `(2, 2/3)` and `(-2, -2/3)`.
    pub fn drop_points() -> [State; 2] {
        [State::new(2.0, 2.0 / 3.0), State::new(-2.0, -2.0 / 3.0)]
    }
}

/// `varphi` at the fold: `ln 1 - 1/2`.
const PHI_AT_FOLD: f64 = -0.5;

#[inline]
fn varphi_unchecked(x: f64) -> f64 {
    x.ln() - 0.5 * x * x
}

/// Slide coordinate `varphi(x) = ln x - x^2/2`, strictly decreasing on
/// `(1, inf)`. The slow subsystem advances it linearly in time.
pub fn varphi(xbar: f64) -> Result<f64> {
    if !(xbar > 1.0) {
        return Err(Error::domain(
            "varphi",
            format!("xbar = {xbar} is not in (1, inf)"),
        ));
    }
    Ok(varphi_unchecked(xbar))
}

/// Inverse of [`varphi`] on `[1, inf)`: the unique `x >= 1` with
/// `varphi(x) = v`, for `v <= -1/2`. The boundary `v = -1/2` maps to the
/// fold value `1` (admitted for jump detection).
///
/// Bracketed Newton iteration with bisection fallback, converged to
/// `|varphi(x) - v| < 1e-13`.
pub fn varphi_inverse(v: f64) -> Result<f64> {
    if !(v <= PHI_AT_FOLD) {
        return Err(Error::Range {
            what: "varphi on (1, inf)",
            value: v,
        });
    }
    if v == PHI_AT_FOLD {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0f64.max((-2.0 * v).sqrt() + 1.0);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = varphi_unchecked(x) - v;
        if f.abs() < 1e-13 {
            return Ok(x);
        }
        // varphi is decreasing: f > 0 puts the root to the right of x.
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let fp = 1.0 / x - x;
        let newton = x - f / fp;
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// Time for the constrained flow to reach the fold point of its branch.
pub fn time_to_fold(cs: ConstrainedState) -> f64 {
    PHI_AT_FOLD - varphi_unchecked(cs.xbar.abs())
}

/// Constrained (slow-subsystem) flow on `W- U W+` after slow time
/// `tau >= 0`: closed-form slide until the fold, then alternating
/// half-period segments from the drop points. Right-continuous at jump
/// instants; exactly `T0`-periodic for `tau >= tau_s`.
pub fn constrained_flow(cs: ConstrainedState, tau: f64) -> Result<ConstrainedState> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    let a = cs.xbar.abs();
    let tau_s = PHI_AT_FOLD - varphi_unchecked(a);
    if tau < tau_s {
        let v = (varphi_unchecked(a) + tau).min(PHI_AT_FOLD);
        let x = varphi_inverse(v)?;
        return ConstrainedState::new(cs.branch, cs.branch.sign() * x);
    }
    // Past the fold: half-period segments, each restarted at its drop
    // point with segment-local time.
    let half = constants::half_t0();
    let r = tau - tau_s;
    let mut n = (r / half).floor();
    let mut local = r - n * half;
    // Snap to the jump instant when roundoff leaves us within an ulp-scale
    // band of it; otherwise a 1-ulp time difference across the
    // discontinuity would produce an O(1) state difference and break the
    // exact T0-periodicity.
    if local >= half - 1e-12 {
        n += 1.0;
        local = 0.0;
    }
    let v = (varphi_unchecked(2.0) + local).min(PHI_AT_FOLD);
    let x = varphi_inverse(v)?;
    // The first post-jump segment (n = 0) lies on the opposite branch.
    let branch = if (n as i64) % 2 == 0 {
        cs.branch.opposite()
    } else {
        cs.branch
    };
    ConstrainedState::new(branch, branch.sign() * x)
}

/// Layer-problem flow: `x' = F(x, y)` at frozen `y`, advanced by fast
/// time `t`. Converges to the attracting root of the point's region.
pub fn fast_subsystem_flow(sys: &SlowFastSystem, x0: f64, y: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Config(format!("t must be non-negative, got {t}")));
    }
    if !x0.is_finite() || !y.is_finite() {
        return Err(Error::NonFiniteState { x: x0, y });
    }
    struct Layer<'a> {
        sys: &'a SlowFastSystem,
        y: f64,
    }
    impl Rhs<1> for Layer<'_> {
        #[inline]
        fn rhs(&self, x: &[f64; 1]) -> [f64; 1] {
            [self.sys.f(x[0], self.y)]
        }
    }
    let rhs = Layer { sys, y };
    let dense = integrate_dense(&rhs, [x0], t, &IntegratorConfig::default())?;
    let x = dense.eval(t)[0];
    if !x.is_finite() {
        return Err(Error::Divergence { t });
    }
    Ok(x)
}

/// Flow of the singular limit on `R^2 \ W0`: the identity at `tau = 0`,
/// and for `tau > 0` the projection onto the attracting branch followed
/// by the constrained flow. Discontinuous at `tau = 0+` off the manifold.
pub fn singular_flow(s: State, tau: f64) -> Result<State> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    if tau == 0.0 {
        if classify_region(s) == Region::OnW0 {
            return Err(Error::ProjectionUndefined { x: s.x, y: s.y });
        }
        return Ok(s);
    }
    let cs = crate::model::project_pi(s)?;
    Ok(constrained_flow(cs, tau)?.as_state())
}

/// Eigenfunction of the constrained-flow Koopman operator at eigenvalue
/// `i*omega0`: `exp(i omega0 varphi(x))` on `W+` and its negative (with
/// `varphi(|x|)`) on `W-`.
pub fn slow_eigenfunction(cs: ConstrainedState) -> Complex64 {
    let phase = constants::omega0() * varphi_unchecked(cs.xbar.abs());
    let value = Complex64::new(0.0, phase).exp();
    match cs.branch {
        AttractingBranch::WPlus => value,
        AttractingBranch::WMinus => -value,
    }
}

/// Eigenfunction of the concatenated (projection then constrained flow)
/// Koopman operator at `i*omega0`. Constant along `x` within each region
/// at fixed `y`; its level sets are the fibers of the projection.
pub fn singular_eigenfunction(s: State) -> Result<Complex64> {
    match classify_region(s) {
        Region::OnW0 => Err(Error::ProjectionUndefined { x: s.x, y: s.y }),
        Region::DPlus => {
            let xbar = gamma(ManifoldBranch::WPlus, s.y)?;
            Ok(Complex64::new(0.0, constants::omega0() * varphi_unchecked(xbar)).exp())
        }
        Region::DMinus => {
            let xbar = gamma(ManifoldBranch::WMinus, s.y)?;
            Ok(-Complex64::new(0.0, constants::omega0() * varphi_unchecked(xbar.abs())).exp())
        }
    }
}

fn random_constrained_state(rng: &mut impl rand::Rng) -> ConstrainedState {
    let branch = if rng.gen_bool(0.5) {
        AttractingBranch::WPlus
    } else {
        AttractingBranch::WMinus
    };
    // Quadratic spacing over (1, 4] keeps the fold neighborhood covered.
    let x = 1.0 + 3.0 * rng.gen::<f64>().powi(2);
    ConstrainedState::new(branch, branch.sign() * x).unwrap()
}

/// Result of the point-spectrum check for one integer harmonic.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub n: i32,
    /// Imaginary part of the checked eigenvalue `i n omega0`.
    pub eigenvalue_im: f64,
    /// Max of `|phi^n(S_tau cs) - e^{i n omega0 tau} phi^n(cs)|`.
    pub max_eigen_residual: f64,
    /// Max of `|S_{tau + T0} cs - S_tau cs|` over sampled `tau >= tau_s`.
    pub max_periodicity_error: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Numerically verifies that the `n`-th power of the slow eigenfunction
/// satisfies the eigen-relation with eigenvalue `i n omega0`, and that
/// the constrained flow is eventually `T0`-periodic (the two facts behind
/// the point spectrum being exactly the integer multiples of `i omega0`).
pub fn spectrum_check(n: i32, sample_count: usize, tau_list: &[f64], seed: u64) -> SpectrumReport {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let omega0 = constants::omega0();
    let t0 = constants::t0();
    let mut max_eigen = 0.0f64;
    let mut max_period = 0.0f64;
    for _ in 0..sample_count {
        let cs = random_constrained_state(&mut rng);
        let base = slow_eigenfunction(cs).powi(n);
        for &tau in tau_list {
            let flowed = constrained_flow(cs, tau).unwrap();
            let lhs = slow_eigenfunction(flowed).powi(n);
            let rhs = Complex64::new(0.0, n as f64 * omega0 * tau).exp() * base;
            max_eigen = max_eigen.max((lhs - rhs).norm());
        }
        // Eventual periodicity, sampled past the fold time.
        let tau_s = time_to_fold(cs);
        for &dtau in tau_list {
            let tau = tau_s + dtau.abs();
            let a = constrained_flow(cs, tau).unwrap().as_state();
            let b = constrained_flow(cs, tau + t0).unwrap().as_state();
            max_period = max_period.max(a.distance(b));
        }
    }
    SpectrumReport {
        n,
        eigenvalue_im: n as f64 * omega0,
        max_eigen_residual: max_eigen,
        max_periodicity_error: max_period,
        samples: sample_count,
        passed: max_eigen < 1e-9 && max_period < 1e-12,
    }
}

/// Complex-valued observable on the constrained-flow state space.
pub type ObservableFn = Arc<dyn Fn(ConstrainedState) -> Complex64 + Send + Sync>;

/// Offsets used to approximate one-sided limits at the fold points.
const LIMIT_OFFSETS: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Tolerance for matching a limit against the value at the drop point.
const LIMIT_TOL: f64 = 1e-6;

/// An observable admissible for the constrained-flow Koopman operator:
/// continuous on each branch, with branch limits at the fold points equal
/// to the values at the corresponding drop points. The constructor
/// verifies the limit matching numerically and rejects violators.
#[derive(Clone)]
pub struct ObservableSample {
    f: ObservableFn,
}

impl ObservableSample {
    pub fn new(f: ObservableFn) -> Result<Self> {
        // Limit along W- into (-1, 2/3) must match the value at (2, 2/3);
        // limit along W+ into (1, -2/3) must match the value at (-2, -2/3).
        let drop_plus = ConstrainedState::new(AttractingBranch::WPlus, 2.0).unwrap();
        let drop_minus = ConstrainedState::new(AttractingBranch::WMinus, -2.0).unwrap();
        let lim_minus = richardson_limit(|h| {
            f(ConstrainedState::new(AttractingBranch::WMinus, -1.0 - h).unwrap())
        });
        let lim_plus = richardson_limit(|h| {
            f(ConstrainedState::new(AttractingBranch::WPlus, 1.0 + h).unwrap())
        });
        let err_minus = (lim_minus - f(drop_plus)).norm();
        let err_plus = (lim_plus - f(drop_minus)).norm();
        if err_minus > LIMIT_TOL || err_plus > LIMIT_TOL {
            return Err(Error::ObservableRejected(format!(
                "fold-point limits do not match the drop-point values \
                 (|lim - value| = {err_minus:.3e} on W-, {err_plus:.3e} on W+)"
            )));
        }
        Ok(Self { f })
    }

    pub fn eval(&self, cs: ConstrainedState) -> Complex64 {
        (self.f)(cs)
    }

    /// The slow eigenfunction as an admissible observable.
    pub fn slow_eigenfunction() -> Self {
        Self::new(Arc::new(slow_eigenfunction)).expect("eigenfunction is admissible")
    }
}

impl std::fmt::Debug for ObservableSample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ObservableSample(..)")
    }
}

/// One-sided limit estimated from geometric offsets with a Richardson
/// extrapolation of the leading O(h) term.
fn richardson_limit(eval: impl Fn(f64) -> Complex64) -> Complex64 {
    let v1 = eval(LIMIT_OFFSETS[1]);
    let v2 = eval(LIMIT_OFFSETS[2]);
    // Offsets shrink by 10x: v(h) ~ L + C h  =>  L = (10 v2 - v1) / 9.
    (10.0 * v2 - v1) / 9.0
}

/// Continuity diagnostics of `U_tau f = f o S_tau` for one `tau`.
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceTauReport {
    pub tau: f64,
    /// Worst two-sided mismatch of `f o S_tau` across pre-jump loci.
    pub max_jump_locus_mismatch: f64,
    /// `|lim_{W- -> fold} f o S_tau - (f o S_tau)(drop on W+)|`.
    pub fold_limit_mismatch_minus: f64,
    /// `|lim_{W+ -> fold} f o S_tau - (f o S_tau)(drop on W-)|`.
    pub fold_limit_mismatch_plus: f64,
}

/// Outcome of the positive-invariance check: composing an admissible
/// observable with the constrained flow stays admissible.
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub per_tau: Vec<InvarianceTauReport>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Numerically verifies that `g = f o S_tau` (i) has matching one-sided
/// limits at every pre-jump locus `tau_s(x) = tau - n T0/2`, sampled on
/// both branches, and (ii) satisfies the fold-point/drop-point limit
/// matching that admissibility requires.
pub fn observable_invariance_check(f: &ObservableSample, tau_list: &[f64]) -> InvarianceReport {
    let half = constants::half_t0();
    let mut per_tau = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        let g = |cs: ConstrainedState| f.eval(constrained_flow(cs, tau).unwrap());

        // (i) Pre-jump loci: x with tau_s(x) = tau - n*T0/2 >= 0. The
        // composition is continuous across them only because the jump
        // target matches the fold limit of f.
        let mut max_jump = 0.0f64;
        let mut n = 0.0;
        while tau - n * half >= 0.0 {
            let v = PHI_AT_FOLD - (tau - n * half);
            if let Ok(x_star) = varphi_inverse(v) {
                if x_star > 1.0 + LIMIT_OFFSETS[0] {
                    for branch in [AttractingBranch::WPlus, AttractingBranch::WMinus] {
                        let at =
                            |x: f64| g(ConstrainedState::new(branch, branch.sign() * x).unwrap());
                        let left = richardson_limit(|h| at(x_star - h));
                        let right = richardson_limit(|h| at(x_star + h));
                        max_jump = max_jump.max((left - right).norm());
                    }
                }
            }
            n += 1.0;
        }

        // (ii) Admissibility of the composition at the fold points.
        let lim_minus = richardson_limit(|h| {
            g(ConstrainedState::new(AttractingBranch::WMinus, -1.0 - h).unwrap())
        });
        let lim_plus = richardson_limit(|h| {
            g(ConstrainedState::new(AttractingBranch::WPlus, 1.0 + h).unwrap())
        });
        let drop_plus = g(ConstrainedState::new(AttractingBranch::WPlus, 2.0).unwrap());
        let drop_minus = g(ConstrainedState::new(AttractingBranch::WMinus, -2.0).unwrap());
        per_tau.push(InvarianceTauReport {
            tau,
            max_jump_locus_mismatch: max_jump,
            fold_limit_mismatch_minus: (lim_minus - drop_plus).norm(),
            fold_limit_mismatch_plus: (lim_plus - drop_minus).norm(),
        });
    }
    let passed = per_tau.iter().all(|r| {
        r.max_jump_locus_mismatch < LIMIT_TOL
            && r.fold_limit_mismatch_minus < LIMIT_TOL
            && r.fold_limit_mismatch_plus < LIMIT_TOL
    });
    InvarianceReport {
        per_tau,
        tolerance: LIMIT_TOL,
        passed,
    }
}
