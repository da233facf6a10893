//! Fixed-step RK4 propagation of the manipulator under a prescribed input.

mod noise;
mod record;
mod schedule;

pub use noise::{derive_seed, measure, mix64, perturb_schedule, NoiseDistribution, NoiseKind, NoiseSpec};
pub use record::{format_sig, ControllerSample, Sample, TrajectoryRecord, CSV_HEADER, PID_CSV_HEADER};
pub use schedule::{InputSchedule, InterpMode};

use serde::{Deserialize, Serialize};

use crate::dynamics::{mechanical_energy, state_derivative, GenInput, State, SystemParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// dt = 1e−3 s.
    pub const fn experiment() -> Self {
        Self {
            dt: 1e-3,
            method: Method::Rk4,
            seed: 0,
        }
    }

    /// dt = 1e−4 s.
    pub const fn oracle() -> Self {
        Self {
            dt: 1e-4,
            method: Method::Rk4,
            seed: 0,
        }
    }

    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::experiment()
        }
    }

    pub fn validate(&self, t_end: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > t_end / 10.0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {} is larger than t_end / 10 = {}",
                self.dt,
                t_end / 10.0
            )));
        }
        Ok(())
    }
}

/// Something that supplies `(τ, f)` at arbitrary times.
pub trait InputSource {
    fn input_at(&self, t: f64) -> GenInput;

    /// Left limit at `t`; differs from [`input_at`](Self::input_at) only at jumps.
    fn input_left_at(&self, t: f64) -> GenInput {
        self.input_at(t)
    }

    /// Times at which the input may jump; steps are aligned to them.
    fn breakpoints(&self) -> Option<&[f64]> {
        None
    }
}

impl InputSource for InputSchedule {
    fn input_at(&self, t: f64) -> GenInput {
        self.eval(t)
    }

    fn input_left_at(&self, t: f64) -> GenInput {
        self.eval_left(t)
    }

    fn breakpoints(&self) -> Option<&[f64]> {
        match self.mode() {
            InterpMode::PiecewiseConstantLeft => Some(self.times()),
            InterpMode::PiecewiseLinear => None,
        }
    }
}

/// Adapter for closures.
pub struct FnInput<F>(pub F);

impl<F: Fn(f64) -> GenInput> InputSource for FnInput<F> {
    fn input_at(&self, t: f64) -> GenInput {
        (self.0)(t)
    }
}

/// Constant input.
impl InputSource for GenInput {
    fn input_at(&self, _t: f64) -> GenInput {
        *self
    }
}

#[inline]
fn axpy(x: &[f64; 4], h: f64, k: &[f64; 4]) -> State {
    State::new(x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3])
}

/// One classical RK4 step of length `h` from `(t, x)`, input sampled at the stage times.
#[inline]
pub fn rk4_step<I: InputSource + ?Sized>(p: &SystemParams, x: &State, t: f64, h: f64, input: &I) -> State {
    let x0 = x.to_array();
    let u0 = input.input_at(t);
    let um = input.input_at(t + 0.5 * h);
    let u1 = input.input_left_at(t + h);
    let k1 = state_derivative(p, x, &u0);
    let k2 = state_derivative(p, &axpy(&x0, 0.5 * h, &k1), &um);
    let k3 = state_derivative(p, &axpy(&x0, 0.5 * h, &k2), &um);
    let k4 = state_derivative(p, &axpy(&x0, h, &k3), &u1);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    State::from_array(out)
}

/// Step boundaries for `[t0, t1]`: full `dt` steps, the last one shortened.
pub fn step_grid(t0: f64, t1: f64, dt: f64, out: &mut Vec<f64>) {
    let span = t1 - t0;
    if span <= 0.0 {
        return;
    }
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    for k in 1..n {
        out.push(t0 + k as f64 * dt);
    }
    out.push(t1);
}

fn plan_steps<I: InputSource + ?Sized>(t0: f64, t_end: f64, dt: f64, input: &I) -> Vec<f64> {
    let mut grid = vec![t0];
    match input.breakpoints() {
        Some(knots) => {
            let mut prev = t0;
            for &k in knots.iter().filter(|&&k| k > t0 && k < t_end) {
                step_grid(prev, k, dt, &mut grid);
                prev = k;
            }
            step_grid(prev, t_end, dt, &mut grid);
        }
        None => step_grid(t0, t_end, dt, &mut grid),
    }
    grid
}

fn check_state(x: &State, t: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Aborted {
            time: t,
            reason: "state became non-finite".into(),
        });
    }
    if x.r <= 0.0 {
        return Err(Error::Aborted {
            time: t,
            reason: format!("radius reached {}", x.r),
        });
    }
    Ok(())
}

/// Integrates from `x0` over `[0, t_end]`, recording every step.
///
/// On abort the partial record is returned together with the error.
pub fn integrate_outcome<I: InputSource + ?Sized>(
    p: &SystemParams,
    x0: &State,
    t_end: f64,
    input: &I,
    cfg: &SimConfig,
) -> (TrajectoryRecord, Option<Error>) {
    let mut rec = TrajectoryRecord::default();
    if let Err(e) = check_state(x0, 0.0) {
        rec.finish(p, *x0);
        return (rec, Some(e));
    }
    rec.push(p, 0.0, *x0, input.input_at(0.0));
    match continue_record(p, &mut rec, t_end, input, cfg.dt) {
        Ok(()) => (rec, None),
        Err(e) => (rec, Some(e)),
    }
}

/// Extends `rec` from its last sample to `t_end` under `input`.
///
/// On abort `aborted_at` is set and the terminal fields hold the last finite state.
pub fn continue_record<I: InputSource + ?Sized>(
    p: &SystemParams,
    rec: &mut TrajectoryRecord,
    t_end: f64,
    input: &I,
    dt: f64,
) -> Result<()> {
    let last = rec
        .samples
        .last()
        .ok_or_else(|| Error::Domain("cannot continue an empty record".into()))?;
    let (t0, mut x) = (last.t, last.state());
    let grid = plan_steps(t0, t_end, dt, input);
    rec.samples.reserve(grid.len());
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let next = rk4_step(p, &x, t, t_next - t, input);
        if let Err(e) = check_state(&next, t_next) {
            rec.aborted_at = Some(t_next);
            rec.finish(p, x);
            return Err(e);
        }
        x = next;
        rec.push(p, t_next, x, input.input_at(t_next));
    }
    rec.finish(p, x);
    Ok(())
}

/// Integrates a schedule from `x0` to its end time.
pub fn integrate(
    p: &SystemParams,
    x0: &State,
    sched: &InputSchedule,
    cfg: &SimConfig,
) -> Result<TrajectoryRecord> {
    let t_end = sched.t_end();
    if !(t_end > 0.0) {
        return Err(Error::Domain("schedule end time must be positive".into()));
    }
    cfg.validate(t_end)?;
    if x0.r <= 0.0 {
        return Err(Error::Domain(format!("initial radius must be positive, got {}", x0.r)));
    }
    match integrate_outcome(p, x0, t_end, sched, cfg) {
        (rec, None) => Ok(rec),
        (_, Some(e)) => Err(e),
    }
}

/// Terminal state only; no record is allocated.
pub fn integrate_terminal<I: InputSource + ?Sized>(
    p: &SystemParams,
    x0: &State,
    t_end: f64,
    input: &I,
    dt: f64,
) -> Result<State> {
    integrate_terminal_from(p, x0, 0.0, t_end, input, dt)
}

/// Terminal state of a run resumed at `(t0, x0)`; the step grid matches a full run
/// whenever `t0` is a breakpoint of `input`.
pub fn integrate_terminal_from<I: InputSource + ?Sized>(
    p: &SystemParams,
    x0: &State,
    t0: f64,
    t_end: f64,
    input: &I,
    dt: f64,
) -> Result<State> {
    check_state(x0, t0)?;
    let grid = plan_steps(t0, t_end, dt, input);
    let mut x = *x0;
    for w in grid.windows(2) {
        x = rk4_step(p, &x, w[0], w[1] - w[0], input);
        check_state(&x, w[1])?;
    }
    Ok(x)
}

/// Energy at the end of a run.
pub fn terminal_energy(p: &SystemParams, x: &State) -> f64 {
    mechanical_energy(p, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{inverse_dynamics, power_balance, Config2};
    use crate::trajectory::{PolynomialProfile, ShapeOrder};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_4;

    fn free() -> SystemParams {
        SystemParams {
            m: 20.0,
            g: 0.0,
            b1: 0.0,
            b2: 0.0,
        }
    }

    #[test]
    fn rest_is_a_fixed_point_without_gravity() {
        let x0 = State::at_rest(0.4, 2.0);
        let rec = integrate_outcome(&free(), &x0, 1.0, &GenInput::ZERO, &SimConfig::experiment()).0;
        assert!(rec.samples.iter().all(|s| s.theta == 0.4 && s.r == 2.0));
        assert_eq!(rec.terminal, x0);
    }

    #[test]
    fn radial_viscous_decay() {
        let p = SystemParams { b2: 50.0, ..free() };
        let x0 = State::new(0.0, 1.0, 0.0, 1.0);
        let sched = InputSchedule::new(vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 2], InterpMode::PiecewiseLinear).unwrap();
        let rec = integrate(&p, &x0, &sched, &SimConfig::oracle()).unwrap();
        assert_relative_eq!(rec.terminal.dr, (-2.5f64).exp(), max_relative = 1e-10);
        assert!((rec.terminal.dr - 0.082085).abs() < 1e-6);
        assert_eq!(rec.samples.last().unwrap().t, 1.0);
    }

    #[test]
    fn last_step_lands_on_end_time() {
        let mut g = vec![0.0];
        step_grid(0.0, 1.0025, 1e-3, &mut g);
        assert_eq!(*g.last().unwrap(), 1.0025);
        assert_eq!(g.len(), 1004);
        let d = g[1003] - g[1002];
        assert!((d - 0.0005).abs() < 1e-12);
    }

    #[test]
    fn abort_on_collapse() {
        // Pull the arm inward hard: r crosses zero.
        let p = free();
        let push = GenInput::new(0.0, -2000.0);
        let (rec, err) = integrate_outcome(&p, &State::at_rest(0.0, 1.0), 2.0, &push, &SimConfig::experiment());
        match err {
            Some(Error::Aborted { time, .. }) => {
                assert!(time > 0.0 && time < 2.0);
                assert_eq!(rec.aborted_at, Some(time));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::with_dt(0.0).validate(1.0).is_err());
        assert!(SimConfig::with_dt(0.2).validate(1.0).is_err());
        assert!(SimConfig::with_dt(0.1).validate(1.0).is_ok());
    }

    #[test]
    fn energy_column_matches_state() {
        let p = SystemParams::nominal();
        let prof = PolynomialProfile::new(ShapeOrder::Quintic, Config2::new(0.0, 1.0), Config2::new(FRAC_PI_4, 4.0), 4.0).unwrap();
        let input = FnInput(|t: f64| inverse_dynamics(&p, &prof.eval(t.clamp(0.0, 4.0)).unwrap()).unwrap());
        let (rec, err) = integrate_outcome(&p, &State::at_rest(0.0, 1.0), 4.0, &input, &SimConfig::experiment());
        assert!(err.is_none());
        for s in rec.samples.iter().step_by(97) {
            assert_eq!(s.energy, mechanical_energy(&p, &s.state()));
        }
        // Midpoint-rule energy balance on each step.
        let mut worst: f64 = 0.0;
        for w in rec.samples.windows(2) {
            let h = w[1].t - w[0].t;
            let de = w[1].energy - w[0].energy;
            let pm = 0.5
                * (power_balance(&p, &w[0].state(), &w[0].input())
                    + power_balance(&p, &w[1].state(), &w[1].input()));
            worst = worst.max((de - h * pm).abs());
        }
        assert!(worst < 1e-6, "worst per-step mismatch {worst}");
    }
}
