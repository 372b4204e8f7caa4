//! Adaptive integration of the perturbed flows, with dense output and
//! section-event detection.
//!
//! The integrator is an embedded Dormand-Prince 5(4) pair with PI step
//! control and a 4th-order continuous extension. Requested horizons in
//! either time scale are always stepped in the fast-time form
//! `x' = F, y' = eps*G`, which is non-stiff for this problem class; slow
//! horizons are converted via `t = tau / eps` and output times rescaled.
//! A fixed-step RK4 method is kept as a convergence oracle.

use crate::error::{Error, Result};
use crate::model::{SlowFastSystem, State, TimeScale};
use std::sync::Arc;

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Embedded Dormand-Prince 5(4) with PI step control (default).
    Dopri5,
    /// Fixed-step classical RK4 with the given fast-time step (oracle).
    Rk4 { dt: f64 },
}

/// Tolerances and limits for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
            method: Method::Dopri5,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::Config("rtol and atol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if let Method::Rk4 { dt } = self.method {
            if !(dt > 0.0) {
                return Err(Error::Config("RK4 step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A sampled solution path. `times` are strictly increasing and expressed
/// in `scale`; the first entry is the initial condition.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scale: TimeScale,
    pub times: Vec<f64>,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> (f64, State) {
        (*self.times.last().unwrap(), *self.states.last().unwrap())
    }
}

/// Right-hand side of an autonomous system in `N` variables.
pub(crate) trait Rhs<const N: usize> {
    fn rhs(&self, y: &[f64; N]) -> [f64; N];
}

impl<F, const N: usize> Rhs<N> for F
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    #[inline]
    fn rhs(&self, y: &[f64; N]) -> [f64; N] {
        self(y)
    }
}

/// Fast-time form of a slow-fast system: `(F, eps*G)`.
pub(crate) struct FastForm<'a>(pub &'a SlowFastSystem);

impl Rhs<2> for FastForm<'_> {
    #[inline]
    fn rhs(&self, y: &[f64; 2]) -> [f64; 2] {
        [self.0.f(y[0], y[1]), self.0.epsilon * self.0.g(y[0], y[1])]
    }
}

// Dormand-Prince 5(4) tableau.
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

// PI step controller constants.
const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// One accepted step with its dense-output coefficients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Step<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y1: [f64; N],
    cont: [[f64; N]; 5],
}

impl<const N: usize> Step<N> {
    /// Interpolant at normalized position `theta` in `[0, 1]`.
    pub fn eval_theta(&self, theta: f64) -> [f64; N] {
        let th1 = 1.0 - theta;
        let mut out = [0.0; N];
        for i in 0..N {
            let c = &self.cont;
            out[i] = c[0][i] + theta * (c[1][i] + th1 * (c[2][i] + theta * (c[3][i] + th1 * c[4][i])));
        }
        out
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        self.eval_theta((t - self.t0) / self.h)
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

/// Outcome of driving the stepper by one accepted step.
pub(crate) enum StepOutcome<const N: usize> {
    Accepted(Step<N>),
    Finished,
}

/// The adaptive stepper. Integrates forward from `t = 0` to `t_end >= 0`.
pub(crate) struct Dopri5<'a, R: Rhs<N>, const N: usize> {
    rhs: &'a R,
    rtol: f64,
    atol: f64,
    max_step: f64,
    max_steps: usize,
    t_end: f64,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    facold: f64,
    steps: usize,
    rejects_in_row: usize,
}

fn axpyn<const N: usize>(y: &[f64; N], h: f64, coef: &[f64], k: &[[f64; N]]) -> [f64; N] {
    let mut out = *y;
    for (c, kk) in coef.iter().zip(k.iter()) {
        if *c != 0.0 {
            for i in 0..N {
                out[i] += h * c * kk[i];
            }
        }
    }
    out
}

impl<'a, R: Rhs<N>, const N: usize> Dopri5<'a, R, N> {
    pub fn new(rhs: &'a R, y0: [f64; N], t_end: f64, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState {
                x: y0[0],
                y: if N > 1 { y0[1] } else { f64::NAN },
            });
        }
        let k1 = rhs.rhs(&y0);
        if !k1.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteEval {
                x: y0[0],
                y: if N > 1 { y0[1] } else { f64::NAN },
            });
        }
        let mut s = Self {
            rhs,
            rtol: cfg.rtol,
            atol: cfg.atol,
            max_step: cfg.max_step,
            max_steps: cfg.max_steps,
            t_end,
            t: 0.0,
            y: y0,
            k1,
            h: 0.0,
            facold: 1e-4,
            steps: 0,
            rejects_in_row: 0,
        };
        s.h = s.initial_step();
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; N] {
        &self.y
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    fn error_norm(&self, y0: &[f64; N], y1: &[f64; N], err: &[f64; N]) -> f64 {
        let mut sum = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * y0[i].abs().max(y1[i].abs());
            let r = err[i] / sc;
            sum += r * r;
        }
        (sum / N as f64).sqrt()
    }

    fn initial_step(&self) -> f64 {
        let mut d0: f64 = 0.0;
        let mut d1: f64 = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * self.y[i].abs();
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.k1[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(self.t_end.max(1e-12));
        let mut y1 = self.y;
        for i in 0..N {
            y1[i] += h0 * self.k1[i];
        }
        let f1 = self.rhs.rhs(&y1);
        let mut d2: f64 = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * self.y[i].abs();
            d2 += ((f1[i] - self.k1[i]) / sc).powi(2);
        }
        let d2 = (d2 / N as f64).sqrt() / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        (100.0 * h0)
            .min(h1)
            .min(self.max_step)
            .min(self.t_end.max(1e-12))
    }

    /// Advance by one accepted step (FSAL), or report the end of the
    /// horizon. Errors on step-size underflow, step-budget exhaustion and
    /// non-finite states.
    pub fn advance(&mut self) -> Result<StepOutcome<N>> {
        if self.t >= self.t_end {
            return Ok(StepOutcome::Finished);
        }
        loop {
            if self.steps >= self.max_steps {
                return Err(Error::Stiffness {
                    t: self.t,
                    x: self.y[0],
                    y: if N > 1 { self.y[1] } else { f64::NAN },
                });
            }
            let mut h = self.h.min(self.max_step);
            let last = self.t + h >= self.t_end;
            if last {
                h = self.t_end - self.t;
            }
            if h <= f64::EPSILON * self.t.abs().max(1.0) {
                return Err(Error::Stiffness {
                    t: self.t,
                    x: self.y[0],
                    y: if N > 1 { self.y[1] } else { f64::NAN },
                });
            }
            self.steps += 1;

            let y0 = self.y;
            let k1 = self.k1;
            let k2 = self.rhs.rhs(&axpyn(&y0, h, &A2, &[k1]));
            let k3 = self.rhs.rhs(&axpyn(&y0, h, &A3, &[k1, k2]));
            let k4 = self.rhs.rhs(&axpyn(&y0, h, &A4, &[k1, k2, k3]));
            let k5 = self.rhs.rhs(&axpyn(&y0, h, &A5, &[k1, k2, k3, k4]));
            let k6 = self.rhs.rhs(&axpyn(&y0, h, &A6, &[k1, k2, k3, k4, k5]));
            let y1 = axpyn(&y0, h, &B, &[k1, k2, k3, k4, k5, k6]);
            let k7 = self.rhs.rhs(&y1);
            let ks = [k1, k2, k3, k4, k5, k6, k7];

            let mut err = [0.0; N];
            for i in 0..N {
                let mut e = 0.0;
                for (j, k) in ks.iter().enumerate() {
                    e += E[j] * k[i];
                }
                err[i] = h * e;
            }
            let err_norm = self.error_norm(&y0, &y1, &err);

            if !err_norm.is_finite() {
                // A stage blew up; retry much smaller.
                self.h = h * 0.1;
                self.rejects_in_row += 1;
                if self.rejects_in_row > 100 {
                    return Err(Error::Divergence { t: self.t });
                }
                continue;
            }

            let fac11 = err_norm.powf(EXPO1);
            if err_norm <= 1.0 {
                self.rejects_in_row = 0;
                let fac =
                    (fac11 / self.facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.facold = err_norm.max(1e-4);
                self.h = h / fac;

                if !y1.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { t: self.t + h });
                }

                // 4th-order continuous extension.
                let mut cont = [[0.0; N]; 5];
                for i in 0..N {
                    let ydiff = y1[i] - y0[i];
                    let bspl = h * k1[i] - ydiff;
                    let mut d = 0.0;
                    for (j, k) in ks.iter().enumerate() {
                        d += D[j] * k[i];
                    }
                    cont[0][i] = y0[i];
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * k7[i] - bspl;
                    cont[4][i] = h * d;
                }

                let step = Step { t0: self.t, h, y1, cont };
                self.t = if last { self.t_end } else { self.t + h };
                self.y = y1;
                self.k1 = k7;
                return Ok(StepOutcome::Accepted(step));
            }

            self.rejects_in_row += 1;
            self.h = h / (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }
}

/// Dense representation of a solution over a fast-time interval.
pub(crate) struct DenseTrajectory<const N: usize> {
    segs: Vec<Step<N>>,
}

impl<const N: usize> DenseTrajectory<N> {
    pub fn t_end(&self) -> f64 {
        self.segs.last().map_or(0.0, |s| s.t1())
    }

    /// Value at fast time `t`, clamped to the covered interval.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let idx = self
            .segs
            .partition_point(|s| s.t1() < t)
            .min(self.segs.len() - 1);
        let seg = &self.segs[idx];
        seg.eval(t.clamp(seg.t0, seg.t1()))
    }
}

pub(crate) fn integrate_dense<R: Rhs<N>, const N: usize>(
    rhs: &R,
    y0: [f64; N],
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<DenseTrajectory<N>> {
    let mut stepper = Dopri5::new(rhs, y0, t_end, cfg)?;
    let mut segs = Vec::new();
    loop {
        match stepper.advance()? {
            StepOutcome::Accepted(s) => segs.push(s),
            StepOutcome::Finished => break,
        }
    }
    if segs.is_empty() {
        let mut cont = [[0.0; N]; 5];
        cont[0] = y0;
        segs.push(Step {
            t0: 0.0,
            h: f64::MIN_POSITIVE,
            y1: y0,
            cont,
        });
    }
    Ok(DenseTrajectory { segs })
}

fn fast_horizon(scale: TimeScale, duration: f64, epsilon: f64) -> f64 {
    match scale {
        TimeScale::Fast => duration,
        TimeScale::Slow => duration / epsilon,
    }
}

fn to_scale(scale: TimeScale, t_fast: f64, epsilon: f64) -> f64 {
    match scale {
        TimeScale::Fast => t_fast,
        TimeScale::Slow => t_fast * epsilon,
    }
}

/// Integrate the system over `duration` (in `scale` units) from `s0`,
/// recording every accepted step.
pub fn integrate(
    sys: &SlowFastSystem,
    s0: State,
    scale: TimeScale,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if !(duration >= 0.0) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    if !s0.is_finite() {
        return Err(Error::NonFiniteState { x: s0.x, y: s0.y });
    }
    let mut times = vec![0.0];
    let mut states = vec![s0];
    if duration == 0.0 {
        return Ok(Trajectory { scale, times, states });
    }
    let t_end = fast_horizon(scale, duration, sys.epsilon);
    let rhs = FastForm(sys);
    match cfg.method {
        Method::Dopri5 => {
            let mut stepper = Dopri5::new(&rhs, [s0.x, s0.y], t_end, cfg)?;
            loop {
                match stepper.advance()? {
                    StepOutcome::Accepted(step) => {
                        times.push(to_scale(scale, step.t1(), sys.epsilon));
                        states.push(State::new(step.y1[0], step.y1[1]));
                    }
                    StepOutcome::Finished => break,
                }
            }
        }
        Method::Rk4 { dt } => {
            let mut t = 0.0;
            let mut y = [s0.x, s0.y];
            let mut steps = 0usize;
            while t < t_end {
                if steps >= cfg.max_steps {
                    return Err(Error::Stiffness { t, x: y[0], y: y[1] });
                }
                let h = dt.min(t_end - t);
                y = rk4_step(&rhs, &y, h);
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { t });
                }
                t += h;
                steps += 1;
                times.push(to_scale(scale, t, sys.epsilon));
                states.push(State::new(y[0], y[1]));
            }
        }
    }
    // The requested endpoint is hit exactly by construction.
    *times.last_mut().unwrap() = duration;
    Ok(Trajectory { scale, times, states })
}

pub(crate) fn rk4_step<R: Rhs<N>, const N: usize>(rhs: &R, y: &[f64; N], h: f64) -> [f64; N] {
    let k1 = rhs.rhs(y);
    let k2 = rhs.rhs(&axpyn(y, 0.5 * h, &[1.0], &[k1]));
    let k3 = rhs.rhs(&axpyn(y, 0.5 * h, &[1.0], &[k2]));
    let k4 = rhs.rhs(&axpyn(y, h, &[1.0], &[k3]));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Final state of [`integrate`] without retaining the path.
pub fn flow(
    sys: &SlowFastSystem,
    s0: State,
    scale: TimeScale,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<State> {
    if !(duration >= 0.0) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    if duration == 0.0 {
        return Ok(s0);
    }
    if let Method::Rk4 { .. } = cfg.method {
        return Ok(integrate(sys, s0, scale, duration, cfg)?.last().1);
    }
    if !s0.is_finite() {
        return Err(Error::NonFiniteState { x: s0.x, y: s0.y });
    }
    let t_end = fast_horizon(scale, duration, sys.epsilon);
    let rhs = FastForm(sys);
    let mut stepper = Dopri5::new(&rhs, [s0.x, s0.y], t_end, cfg)?;
    loop {
        match stepper.advance()? {
            StepOutcome::Accepted(_) => {}
            StepOutcome::Finished => break,
        }
    }
    let y = stepper.y();
    Ok(State::new(y[0], y[1]))
}

/// Direction filter for section crossings, in terms of the sign change of
/// the section function `g` along the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingDirection {
    Rising,
    Falling,
    Both,
}

/// A line event `g(x, y) = a*x + b*y + c = 0` with a crossing direction
/// and an optional admissibility gate checked at the refined hit.
#[derive(Clone)]
pub struct Section {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub direction: CrossingDirection,
    gate: Option<Arc<dyn Fn(State) -> bool + Send + Sync>>,
}

impl Section {
    pub fn new(a: f64, b: f64, c: f64, direction: CrossingDirection) -> Self {
        Self {
            a,
            b,
            c,
            direction,
            gate: None,
        }
    }

    pub fn with_gate(mut self, gate: impl Fn(State) -> bool + Send + Sync + 'static) -> Self {
        self.gate = Some(Arc::new(gate));
        self
    }

    /// The canonical phase section `{y = 0, x > 0}` crossed downward in
    /// `y`; the oscillation phase is anchored at its cycle crossing.
    pub fn phase_anchor() -> Self {
        Self::new(0.0, 1.0, 0.0, CrossingDirection::Falling).with_gate(|s: State| s.x > 0.0)
    }

    #[inline]
    pub fn g(&self, s: State) -> f64 {
        self.a * s.x + self.b * s.y + self.c
    }

    fn admits(&self, s: State) -> bool {
        self.gate.as_ref().map_or(true, |g| g(s))
    }

    fn is_crossing(&self, g0: f64, g1: f64) -> bool {
        match self.direction {
            CrossingDirection::Rising => g0 < 0.0 && g1 >= 0.0,
            CrossingDirection::Falling => g0 > 0.0 && g1 <= 0.0,
            CrossingDirection::Both => g0 * g1 < 0.0 || (g0 != 0.0 && g1 == 0.0),
        }
    }
}

impl std::fmt::Debug for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Section")
            .field("a", &self.a)
            .field("b", &self.b)
            .field("c", &self.c)
            .field("direction", &self.direction)
            .field("gated", &self.gate.is_some())
            .finish()
    }
}

// Event refinement: bisection on dense output down to |g| < 1e-12 (at most
// 80 halvings); crossings within the refractory interval are ignored so an
// on-section start is not reported as an immediate hit.
const EVENT_TOL: f64 = 1e-12;
const EVENT_MAX_BISECT: usize = 80;
const REFRACTORY_FAST: f64 = 1e-3;
const EVENT_SUBSAMPLES: usize = 8;

/// First directional crossing of `section` after the refractory interval,
/// searched up to `t_max` (in `scale` units). Returns the refined hit and
/// its time in `scale` units.
pub fn integrate_until_section(
    sys: &SlowFastSystem,
    s0: State,
    scale: TimeScale,
    section: &Section,
    cfg: &IntegratorConfig,
    t_max: f64,
) -> Result<(State, f64)> {
    if !(t_max > 0.0) {
        return Err(Error::Config(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    if !s0.is_finite() {
        return Err(Error::NonFiniteState { x: s0.x, y: s0.y });
    }
    let t_end = fast_horizon(scale, t_max, sys.epsilon);
    let rhs = FastForm(sys);
    let mut stepper = Dopri5::new(&rhs, [s0.x, s0.y], t_end, cfg)?;
    loop {
        let step = match stepper.advance()? {
            StepOutcome::Accepted(s) => s,
            StepOutcome::Finished => return Err(Error::NoEvent { t_max }),
        };
        if let Some((state, t_fast)) = search_step_for_crossing(&step, section) {
            if t_fast >= REFRACTORY_FAST {
                return Ok((state, to_scale(scale, t_fast, sys.epsilon)));
            }
        }
    }
}

/// Scan one accepted step for the first admissible directional crossing.
fn search_step_for_crossing(step: &Step<2>, section: &Section) -> Option<(State, f64)> {
    let state_at = |theta: f64| {
        let y = step.eval_theta(theta);
        State::new(y[0], y[1])
    };
    let mut prev_theta = 0.0;
    let mut prev_g = section.g(state_at(0.0));
    for i in 1..=EVENT_SUBSAMPLES {
        let theta = i as f64 / EVENT_SUBSAMPLES as f64;
        let g = section.g(state_at(theta));
        if section.is_crossing(prev_g, g) {
            let (mut lo, mut hi) = (prev_theta, theta);
            let mut mid = 0.5 * (lo + hi);
            for _ in 0..EVENT_MAX_BISECT {
                mid = 0.5 * (lo + hi);
                let gm = section.g(state_at(mid));
                if gm.abs() < EVENT_TOL {
                    break;
                }
                if section.is_crossing(prev_g, gm) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let hit = state_at(mid);
            if section.admits(hit) {
                return Some((hit, step.t0 + mid * step.h));
            }
        }
        prev_theta = theta;
        prev_g = g;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vdp(eps: f64) -> SlowFastSystem {
        SlowFastSystem::van_der_pol(eps).unwrap()
    }

    #[test]
    fn zero_duration_is_identity() {
        let sys = vdp(1.0);
        let s0 = State::new(0.3, -1.2);
        let traj = integrate(&sys, s0, TimeScale::Slow, 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0], s0);
        assert_eq!(
            flow(&sys, s0, TimeScale::Fast, 0.0, &IntegratorConfig::default()).unwrap(),
            s0
        );
    }

    #[test]
    fn times_strictly_increasing_and_scaled() {
        let sys = vdp(0.1);
        let traj = integrate(
            &sys,
            State::new(2.0, 0.0),
            TimeScale::Slow,
            0.5,
            &IntegratorConfig::default(),
        )
        .unwrap();
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_abs_diff_eq!(traj.last().0, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn slow_fast_duality() {
        // S_slow,tau equals S_fast,tau/eps through the public API.
        let cfg = IntegratorConfig::default();
        for &eps in &[1.0, 0.1, 0.01] {
            let sys = vdp(eps);
            for &(x, y) in &[(2.0, 0.0), (-1.5, 1.0), (0.5, -0.4)] {
                let s0 = State::new(x, y);
                for &tau in &[0.1, 1.0] {
                    let a = flow(&sys, s0, TimeScale::Slow, tau, &cfg).unwrap();
                    let b = flow(&sys, s0, TimeScale::Fast, tau / eps, &cfg).unwrap();
                    assert!(a.distance(b) < 1e-6, "duality at eps={eps} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn collapse_onto_right_branch() {
        // From (-3.8, 2) the slow-scale flow collapses onto W+ almost
        // instantly; cross-checked against the fixed-step RK4 oracle.
        let sys = vdp(0.01);
        let cfg = IntegratorConfig::default();
        let end = flow(&sys, State::new(-3.8, 2.0), TimeScale::Slow, 0.05, &cfg).unwrap();
        // x sits on the slow manifold, an O(eps) layer around W+; y has
        // drifted slightly below 2 during the window.
        let target = crate::model::gamma(crate::model::ManifoldBranch::WPlus, end.y).unwrap();
        assert!((end.x - target).abs() < 2.0 * sys.epsilon);
        assert!(end.distance(State::new(2.35530139760812, 2.0)) < 0.15);
        assert_abs_diff_eq!(end.y, 2.0, epsilon = 6e-2);

        let rk4 = IntegratorConfig {
            method: Method::Rk4 { dt: 1e-5 },
            ..IntegratorConfig::default()
        };
        let oracle = flow(&sys, State::new(-3.8, 2.0), TimeScale::Slow, 0.05, &rk4).unwrap();
        assert!(end.distance(oracle) < 1e-6);
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // Halving the RK4 step shrinks the terminal error ~16x against a
        // tight adaptive reference.
        let sys = vdp(1.0);
        let s0 = State::new(2.0, 0.0);
        let t = 5.0;
        let reference = flow(
            &sys,
            s0,
            TimeScale::Fast,
            t,
            &IntegratorConfig {
                rtol: 1e-12,
                atol: 1e-14,
                ..IntegratorConfig::default()
            },
        )
        .unwrap();
        let err = |dt: f64| {
            let cfg = IntegratorConfig {
                method: Method::Rk4 { dt },
                ..IntegratorConfig::default()
            };
            flow(&sys, s0, TimeScale::Fast, t, &cfg)
                .unwrap()
                .distance(reference)
        };
        let e1 = err(0.01);
        let e2 = err(0.005);
        let ratio = e1 / e2;
        assert!(
            (10.0..24.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio} (e1={e1:.3e}, e2={e2:.3e})"
        );
    }

    #[test]
    fn dense_output_matches_direct_integration() {
        let sys = vdp(1.0);
        let rhs = FastForm(&sys);
        let cfg = IntegratorConfig::default();
        let dense = integrate_dense(&rhs, [2.0, 0.0], 3.0, &cfg).unwrap();
        for &t in &[0.37, 1.234, 2.999] {
            let direct = flow(&sys, State::new(2.0, 0.0), TimeScale::Fast, t, &cfg).unwrap();
            let interp = dense.eval(t);
            assert!(
                direct.distance(State::new(interp[0], interp[1])) < 1e-7,
                "dense output at t = {t}"
            );
        }
    }

    #[test]
    fn section_event_at_anchor_crossing() {
        let sys = vdp(1.0);
        let cfg = IntegratorConfig::default();
        let section = Section::phase_anchor();
        let (hit, t_hit) = integrate_until_section(
            &sys,
            State::new(2.0, 0.5),
            TimeScale::Fast,
            &section,
            &cfg,
            20.0,
        )
        .unwrap();
        assert!(hit.y.abs() < 1e-10);
        assert!(hit.x > 0.0);
        assert!(t_hit > 0.0 && t_hit < 20.0);
    }

    #[test]
    fn section_direction_filter() {
        // From the downward-crossing point, a rising-direction section on
        // the same line is first met half a cycle later (odd symmetry),
        // not at t = 0.
        let sys = vdp(1.0);
        let cfg = IntegratorConfig::default();
        let falling = Section::phase_anchor();
        let (anchorish, _) = integrate_until_section(
            &sys,
            State::new(2.0, 0.0),
            TimeScale::Fast,
            &falling,
            &cfg,
            40.0,
        )
        .unwrap();
        let rising = Section::new(0.0, 1.0, 0.0, CrossingDirection::Rising);
        let (hit, t_hit) =
            integrate_until_section(&sys, anchorish, TimeScale::Fast, &rising, &cfg, 20.0).unwrap();
        assert!(t_hit > 1.0, "direction filter failed: hit at {t_hit}");
        assert!(hit.x < 0.0);
    }

    #[test]
    fn no_event_before_t_max() {
        let sys = vdp(1.0);
        let cfg = IntegratorConfig::default();
        let far = Section::new(1.0, 0.0, -50.0, CrossingDirection::Both);
        let out = integrate_until_section(
            &sys,
            State::new(0.01, 0.01),
            TimeScale::Fast,
            &far,
            &cfg,
            1.0,
        );
        assert!(matches!(out, Err(Error::NoEvent { .. })));
    }

    #[test]
    fn determinism_bitwise() {
        let sys = vdp(0.1);
        let cfg = IntegratorConfig::default();
        let run = || {
            integrate(&sys, State::new(1.7, -0.3), TimeScale::Slow, 3.0, &cfg)
                .unwrap()
                .states
                .iter()
                .flat_map(|s| [s.x.to_bits(), s.y.to_bits()])
                .collect::<Vec<_>>()
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn max_steps_reports_stiffness() {
        let sys = vdp(1.0);
        let cfg = IntegratorConfig {
            max_steps: 10,
            ..IntegratorConfig::default()
        };
        let out = integrate(&sys, State::new(2.0, 0.0), TimeScale::Fast, 100.0, &cfg);
        assert!(matches!(out, Err(Error::Stiffness { .. })));
    }
}
