//! Limit-cycle location and the principal Koopman eigenvalues
//! `i*omega` (fundamental frequency) and `nu` (Floquet exponent).
//!
//! The cycle is found as the fixed point of the Poincare return map on
//! the canonical phase section `{y = 0, x > 0}`, refined by the secant
//! method. The Floquet exponent is computed primarily by the
//! divergence (Liouville) line integral along the cycle, which stays
//! well-conditioned even when the direct multiplier `e^{nu T}` is far
//! below the precision floor; the monodromy-matrix route is kept as an
//! independent oracle for moderate time-scale separation.

use crate::error::{Error, Result};
use crate::model::{SlowFastSystem, State, TimeScale};
use crate::ode::{
    flow, integrate_dense, integrate_until_section, FastForm, IntegratorConfig, Rhs, Section,
};
use crate::singular::constants;
use serde::Serialize;

/// The located stable limit cycle of a slow-fast system.
///
/// `period` and `floquet_nu` are in slow-time units; `omega * period`
/// equals `2 pi` exactly by construction. `samples` are phase-equispaced
/// along the cycle: sample `k` sits at phase `theta = 2 pi k / N`,
/// starting from `anchor` (the downward crossing of `{y = 0, x > 0}`,
/// where the phase is pinned to zero).
#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub epsilon: f64,
    pub period: f64,
    pub omega: f64,
    pub floquet_nu: f64,
    pub anchor: State,
    pub samples: Vec<State>,
    /// Return-map residual at the fixed point (section coordinate).
    pub return_residual: f64,
    /// Distance from the anchor after one full period.
    pub closure_error: f64,
}

impl LimitCycle {
    /// Phase of sample `k`.
    pub fn theta(&self, k: usize) -> f64 {
        2.0 * std::f64::consts::PI * k as f64 / self.samples.len() as f64
    }

    /// Fast-time period `T / eps`.
    pub fn period_fast(&self) -> f64 {
        self.period / self.epsilon
    }
}

/// Parameters of the cycle search.
#[derive(Debug, Clone)]
pub struct CycleConfig {
    pub integrator: IntegratorConfig,
    /// Number of phase-equispaced samples stored on the cycle.
    pub n_samples: usize,
    /// Transient burn-in before the return map, in slow-time units.
    pub burn_in_slow: f64,
    /// Convergence threshold for the return-map fixed point.
    pub secant_tol: f64,
    pub max_secant_iters: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            n_samples: 2048,
            burn_in_slow: 5.0,
            secant_tol: 1e-12,
            max_secant_iters: 50,
        }
    }
}

/// Quadrature nodes for the divergence line integral; halved for the
/// Richardson consistency check.
const NU_QUADRATURE_NODES: usize = 20_000;

fn section_t_max_fast(epsilon: f64) -> f64 {
    50.0f64.max(30.0 / epsilon)
}

/// One application of the return map from section coordinate `x`:
/// the next downward crossing of `{y = 0, x > 0}` and the fast time to it.
fn return_map(
    sys: &SlowFastSystem,
    x: f64,
    section: &Section,
    cfg: &IntegratorConfig,
) -> Result<(f64, f64)> {
    let (hit, t_fast) = integrate_until_section(
        sys,
        State::new(x, 0.0),
        TimeScale::Fast,
        section,
        cfg,
        section_t_max_fast(sys.epsilon),
    )?;
    Ok((hit.x, t_fast))
}

/// Locate the attracting limit cycle: burn in from `(2, 0)`, then refine
/// the section fixed point with the secant method until the return-map
/// residual drops below `cfg.secant_tol`.
pub fn find_limit_cycle(sys: &SlowFastSystem, cfg: &CycleConfig) -> Result<LimitCycle> {
    let section = Section::phase_anchor();
    let icfg = &cfg.integrator;

    let settled = flow(
        sys,
        State::new(2.0, 0.0),
        TimeScale::Slow,
        cfg.burn_in_slow,
        icfg,
    )?;
    let (start, _) = integrate_until_section(
        sys,
        settled,
        TimeScale::Fast,
        &section,
        icfg,
        section_t_max_fast(sys.epsilon),
    )?;

    // Secant iteration on r(x) = P(x) - x.
    let mut x_prev = start.x;
    let (px, mut t_return) = return_map(sys, x_prev, &section, icfg)?;
    let mut r_prev = px - x_prev;
    let mut x = px;
    let mut residual = r_prev.abs();
    for _ in 0..cfg.max_secant_iters {
        let (px, t) = return_map(sys, x, &section, icfg)?;
        let r = px - x;
        t_return = t;
        residual = r.abs();
        if residual < cfg.secant_tol {
            break;
        }
        let denom = r - r_prev;
        let next = if denom.abs() > 1e-300 {
            x - r * (x - x_prev) / denom
        } else {
            px
        };
        x_prev = x;
        r_prev = r;
        x = if next.is_finite() && next > 0.0 { next } else { px };
    }
    if residual >= cfg.secant_tol {
        return Err(Error::CycleNotFound(format!(
            "return map did not converge: residual {residual:.3e} after {} iterations",
            cfg.max_secant_iters
        )));
    }

    let anchor = State::new(x, 0.0);
    let period_fast = t_return;
    let period = period_fast * sys.epsilon;
    let omega = 2.0 * std::f64::consts::PI / period;

    // Phase-equispaced samples from the dense one-period orbit.
    let rhs = FastForm(sys);
    let dense = integrate_dense(&rhs, [anchor.x, anchor.y], period_fast, icfg)?;
    let n = cfg.n_samples.max(2);
    let samples = (0..n)
        .map(|k| {
            let p = dense.eval(k as f64 * period_fast / n as f64);
            State::new(p[0], p[1])
        })
        .collect::<Vec<_>>();
    let endpoint = dense.eval(period_fast);
    let closure_error = anchor.distance(State::new(endpoint[0], endpoint[1]));

    let mut cycle = LimitCycle {
        epsilon: sys.epsilon,
        period,
        omega,
        floquet_nu: f64::NAN,
        anchor,
        samples,
        return_residual: residual,
        closure_error,
    };
    cycle.floquet_nu = floquet_exponent_divergence(sys, &cycle)?;
    if !(cycle.floquet_nu < 0.0) {
        return Err(Error::CycleNotFound(format!(
            "computed Floquet exponent {} is not negative",
            cycle.floquet_nu
        )));
    }
    Ok(cycle)
}

/// d/dx and d/dy of a scalar field by central differences.
fn partials(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64) -> (f64, f64) {
    let hx = 1e-6 * x.abs().max(1.0);
    let hy = 1e-6 * y.abs().max(1.0);
    (
        (f(x + hx, y) - f(x - hx, y)) / (2.0 * hx),
        (f(x, y + hy) - f(x, y - hy)) / (2.0 * hy),
    )
}

/// Floquet exponent (slow-time units) by the divergence line integral
/// `nu = (1/T) \oint [ (1/eps) dF/dx + dG/dy ] dtau` along the cycle,
/// evaluated as `(1/T) \int_0^{T/eps} [dF/dx + eps dG/dy] dt` on dense
/// output: composite trapezoid with Richardson extrapolation from the
/// half-resolution grid.
///
/// This route never forms the multiplier `e^{nu T}` and therefore does
/// not lose precision when the cycle is strongly contracting.
pub fn floquet_exponent_divergence(sys: &SlowFastSystem, cycle: &LimitCycle) -> Result<f64> {
    let rhs = FastForm(sys);
    let period_fast = cycle.period_fast();
    let dense = integrate_dense(
        &rhs,
        [cycle.anchor.x, cycle.anchor.y],
        period_fast,
        &IntegratorConfig::default(),
    )?;
    let integrand = |t: f64| {
        let p = dense.eval(t);
        let (fx, _) = partials(&|x, y| sys.f(x, y), p[0], p[1]);
        let (_, gy) = partials(&|x, y| sys.g(x, y), p[0], p[1]);
        fx + sys.epsilon * gy
    };
    let coarse = trapezoid(&integrand, period_fast, NU_QUADRATURE_NODES / 2);
    let fine = trapezoid(&integrand, period_fast, NU_QUADRATURE_NODES);
    if !coarse.is_finite() || !fine.is_finite() {
        return Err(Error::Quadrature);
    }
    // Trapezoid error is O(h^2): the Richardson combination cancels it,
    // and the coarse/fine difference doubles as a consistency estimate.
    let integral = (4.0 * fine - coarse) / 3.0;
    Ok(integral / cycle.period)
}

fn trapezoid(f: &impl Fn(f64) -> f64, length: f64, nodes: usize) -> f64 {
    let h = length / nodes as f64;
    let mut sum = 0.5 * (f(0.0) + f(length));
    for i in 1..nodes {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// Exponent magnitude beyond which the nontrivial multiplier cannot be
/// extracted from the monodromy matrix at working precision.
const MONODROMY_EXPONENT_LIMIT: f64 = 500.0;

/// Floquet exponent by the monodromy matrix: integrates the 2x2
/// variational equation along one period (fast time) and takes the log of
/// the nontrivial multiplier. Refuses deeply contracting regimes where
/// the multiplier drowns in the precision floor; use the divergence route
/// there.
pub fn floquet_exponent_monodromy(sys: &SlowFastSystem, cycle: &LimitCycle) -> Result<f64> {
    let severity = cycle.floquet_nu.abs() * cycle.period / sys.epsilon;
    if !severity.is_finite() || severity > MONODROMY_EXPONENT_LIMIT {
        return Err(Error::Range {
            what: "monodromy multiplier extraction",
            value: severity,
        });
    }

    // State plus column-major variational matrix, in fast time.
    struct Augmented<'a> {
        sys: &'a SlowFastSystem,
    }
    impl Rhs<6> for Augmented<'_> {
        fn rhs(&self, v: &[f64; 6]) -> [f64; 6] {
            let (x, y) = (v[0], v[1]);
            let eps = self.sys.epsilon;
            let (fx, fy) = partials(&|a, b| self.sys.f(a, b), x, y);
            let (gx, gy) = partials(&|a, b| self.sys.g(a, b), x, y);
            let j = [[fx, fy], [eps * gx, eps * gy]];
            [
                self.sys.f(x, y),
                eps * self.sys.g(x, y),
                j[0][0] * v[2] + j[0][1] * v[3],
                j[1][0] * v[2] + j[1][1] * v[3],
                j[0][0] * v[4] + j[0][1] * v[5],
                j[1][0] * v[4] + j[1][1] * v[5],
            ]
        }
    }

    let rhs = Augmented { sys };
    let y0 = [cycle.anchor.x, cycle.anchor.y, 1.0, 0.0, 0.0, 1.0];
    let dense = integrate_dense(&rhs, y0, cycle.period_fast(), &IntegratorConfig::default())?;
    let m = dense.eval(cycle.period_fast());
    let (m11, m21, m12, m22) = (m[2], m[3], m[4], m[5]);
    let tr = m11 + m22;
    let det = m11 * m22 - m12 * m21;
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        return Err(Error::CycleNotFound(format!(
            "monodromy multipliers are complex (disc = {disc:.3e})"
        )));
    }
    let sq = disc.sqrt();
    let (mu_a, mu_b) = ((tr + sq) / 2.0, (tr - sq) / 2.0);
    // The multiplier along the flow direction must be 1.
    let (trivial, nontrivial) = if (mu_a - 1.0).abs() <= (mu_b - 1.0).abs() {
        (mu_a, mu_b)
    } else {
        (mu_b, mu_a)
    };
    if (trivial - 1.0).abs() > 1e-6 {
        return Err(Error::CycleNotFound(format!(
            "trivial multiplier {trivial} deviates from 1 beyond 1e-6"
        )));
    }
    if !(nontrivial > 0.0) {
        return Err(Error::CycleNotFound(format!(
            "nontrivial multiplier {nontrivial} is not positive"
        )));
    }
    Ok(nontrivial.ln() / cycle.period)
}

/// Zeroth-order estimates from the singular limit:
/// `(T0, omega0, nu0 / eps)`.
pub fn asymptotic_estimates(epsilon: f64) -> Result<(f64, f64, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok((
        constants::t0(),
        constants::omega0(),
        constants::nu0() / epsilon,
    ))
}

/// Serializable summary of one cycle computation. Field order is the
/// wire order of the JSON object; `wall_seconds` is diagnostic only and
/// excluded so file outputs are byte-reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub epsilon: f64,
    pub period: f64,
    pub omega: f64,
    pub nu: f64,
    pub nu_monodromy: Option<f64>,
    pub residuals: CycleResiduals,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleResiduals {
    pub return_map: f64,
    pub closure: f64,
}

impl CycleReport {
    /// Compute the cycle and package the report. The monodromy exponent
    /// is included where its extraction is well-conditioned.
    pub fn compute(sys: &SlowFastSystem, cfg: &CycleConfig) -> Result<Self> {
        let started = std::time::Instant::now();
        let cycle = find_limit_cycle(sys, cfg)?;
        let nu_monodromy = floquet_exponent_monodromy(sys, &cycle).ok();
        Ok(Self {
            epsilon: cycle.epsilon,
            period: cycle.period,
            omega: cycle.omega,
            nu: cycle.floquet_nu,
            nu_monodromy,
            residuals: CycleResiduals {
                return_map: cycle.return_residual,
                closure: cycle.closure_error,
            },
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
