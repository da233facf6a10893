use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{mechanical_energy, GenInput, State, SystemParams};
use crate::error::{Error, Result};
use crate::planners::{ActuatorBounds, Protocol};
use crate::robustness::re_metric;
use crate::simulate::{
    integrate_outcome, integrate_terminal, integrate_terminal_from, measure, InputSchedule, InputSource, InterpMode, NoiseSpec, SimConfig,
    TrajectoryRecord,
};
use crate::trajectory::Reference;

/// Normalized errors below this are integration noise, not a deviation to correct.
pub const ERROR_DEADBAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Scale the nominal input value frozen at the measurement instant.
    #[default]
    LiteralHold,
    /// Scale the time-varying nominal input.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// Measurement instant (s).
    pub t_i: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub mode: CorrectionMode,
}

impl CorrectionConfig {
    pub fn validate(&self, t_f: f64) -> Result<()> {
        let all = [self.t_i, self.c1, self.c2, self.c3, self.c4, self.c5];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("correction parameters must be finite".into()));
        }
        if !(self.t_i > 0.0 && self.t_i < t_f) {
            return Err(Error::Config(format!("t_i = {} must lie in (0, {t_f})", self.t_i)));
        }
        if !(self.c1 > 0.0 && self.c3 > 0.0 && self.c5 > 0.0) {
            return Err(Error::Config("c1, c3 and c5 must be positive".into()));
        }
        Ok(())
    }
}

/// What the single measurement produced; serialized as the run's JSON sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub t_i: f64,
    /// Position error `q_ref(t_i) − q_meas` as `(θ, r)`.
    pub e_meas: [f64; 2],
    pub epsilon: [f64; 2],
    pub t1_theta: f64,
    pub t1_r: f64,
    pub t2_theta: f64,
    pub t2_r: f64,
    /// `[[stage-1 τ, stage-1 f], [stage-2 τ, stage-2 f]]` scale factors.
    pub factors: [[f64; 2]; 2],
    /// Nominal input at `t_i`.
    pub held: GenInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Window {
    start: f64,
    mid: f64,
    end: f64,
    f1: f64,
    f2: f64,
}

impl Window {
    fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Scale factor at `t`; `left` selects the left limit at boundaries.
    fn factor(&self, t: f64, left: bool) -> Option<f64> {
        let inside = |a: f64, b: f64| if left { a < t && t <= b } else { a <= t && t < b };
        if inside(self.start, self.mid) {
            Some(self.f1)
        } else if inside(self.mid, self.end) {
            Some(self.f2)
        } else {
            None
        }
    }
}

/// Nominal schedule with the two-stage windows applied per channel.
struct CorrectedInput<'a> {
    nominal: &'a InputSchedule,
    windows: [Window; 2],
    mode: CorrectionMode,
    held: GenInput,
    bounds: Option<ActuatorBounds>,
    knots: Vec<f64>,
}

impl<'a> CorrectedInput<'a> {
    fn new(nominal: &'a InputSchedule, windows: [Window; 2], mode: CorrectionMode, held: GenInput, bounds: Option<ActuatorBounds>) -> Self {
        let mut knots: Vec<f64> = windows
            .iter()
            .filter(|w| !w.is_empty())
            .flat_map(|w| [w.start, w.mid, w.end])
            .collect();
        if nominal.mode() == InterpMode::PiecewiseConstantLeft {
            knots.extend_from_slice(nominal.times());
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        Self {
            nominal,
            windows,
            mode,
            held,
            bounds,
            knots,
        }
    }

    fn value(&self, t: f64, left: bool) -> GenInput {
        let base = if left { self.nominal.eval_left(t) } else { self.nominal.eval(t) };
        let mut out = [base.tau, base.f];
        let held = [self.held.tau, self.held.f];
        let mut touched = false;
        for ch in 0..2 {
            if let Some(fac) = self.windows[ch].factor(t, left) {
                out[ch] = fac
                    * match self.mode {
                        CorrectionMode::LiteralHold => held[ch],
                        CorrectionMode::Multiplicative => out[ch],
                    };
                touched = true;
            }
        }
        let u = GenInput::new(out[0], out[1]);
        match self.bounds {
            Some(b) if touched => b.clip(u),
            _ => u,
        }
    }
}

impl InputSource for CorrectedInput<'_> {
    fn input_at(&self, t: f64) -> GenInput {
        self.value(t, false)
    }

    fn input_left_at(&self, t: f64) -> GenInput {
        self.value(t, true)
    }

    fn breakpoints(&self) -> Option<&[f64]> {
        if self.knots.is_empty() {
            None
        } else {
            Some(&self.knots)
        }
    }
}

/// Windows and report from a measured configuration at `t_i`.
fn plan_correction(nominal: &Protocol, cfg: &CorrectionConfig, measured: crate::dynamics::Config2) -> Result<([Window; 2], CorrectionReport)> {
    let reference = nominal
        .reference
        .as_ref()
        .ok_or_else(|| Error::Config("correction needs a protocol with a reference trajectory".into()))?;
    let kin = reference.kin_at(cfg.t_i)?;
    let e = [kin.q.theta - measured.theta, kin.q.r - measured.r];
    let v = [kin.dq.theta, kin.dq.r];
    let span = [
        nominal.endpoints.qf.theta - nominal.endpoints.q0.theta,
        nominal.endpoints.qf.r - nominal.endpoints.q0.r,
    ];
    let mut windows = [Window {
        start: cfg.t_i,
        mid: cfg.t_i,
        end: cfg.t_i,
        f1: 1.0,
        f2: 1.0,
    }; 2];
    let mut eps = [0.0; 2];
    let mut t1 = [0.0; 2];
    let mut t2 = [0.0; 2];
    for ch in 0..2 {
        if span[ch] != 0.0 && (e[ch] / span[ch]).abs() < ERROR_DEADBAND {
            continue;
        }
        if e[ch] == 0.0 {
            continue;
        }
        if v[ch].abs() < 1e-9 {
            return Err(Error::Domain(format!(
                "reference velocity vanishes at t_i on channel {ch}; correction duration undefined"
            )));
        }
        if span[ch] == 0.0 {
            return Err(Error::Domain(format!("channel {ch} has zero displacement; normalized error undefined")));
        }
        eps[ch] = e[ch] / span[ch];
        t1[ch] = (e[ch] / v[ch]).abs();
        t2[ch] = t1[ch] / cfg.c1;
        let w = &mut windows[ch];
        w.mid = cfg.t_i + t1[ch];
        w.end = w.mid + t2[ch];
        w.f1 = 1.0 + cfg.c2 / (t1[ch] + cfg.c3) * eps[ch];
        w.f2 = 1.0 - cfg.c4 / (t2[ch] + cfg.c5) * eps[ch];
        if w.end >= nominal.t_f {
            return Err(Error::Domain(format!(
                "correction window on channel {ch} ends at {:.6} s, past t_f = {}",
                w.end, nominal.t_f
            )));
        }
    }
    let held = nominal.schedule.eval(cfg.t_i);
    let report = CorrectionReport {
        t_i: cfg.t_i,
        e_meas: e,
        epsilon: eps,
        t1_theta: t1[0],
        t1_r: t1[1],
        t2_theta: t2[0],
        t2_r: t2[1],
        factors: [[windows[0].f1, windows[1].f1], [windows[0].f2, windows[1].f2]],
        held,
    };
    Ok((windows, report))
}

/// Outcome of one corrected run.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedRun {
    pub record: TrajectoryRecord,
    /// `None` when the run aborted before the measurement.
    pub report: Option<CorrectionReport>,
}

/// Follows `nominal` to `cfg.t_i`, measures once, applies the two-stage correction
/// on each channel, then resumes the nominal schedule at the true elapsed time.
pub fn single_shot_correct(
    p: &SystemParams,
    nominal: &Protocol,
    cfg: &CorrectionConfig,
    x0: &State,
    meas_noise: Option<&NoiseSpec>,
    seed: u64,
    sim: &SimConfig,
) -> Result<CorrectedRun> {
    cfg.validate(nominal.t_f)?;
    sim.validate(nominal.t_f)?;
    let x_i = match integrate_terminal(p, x0, cfg.t_i, &nominal.schedule, sim.dt) {
        Ok(x) => x,
        Err(Error::Aborted { .. }) => {
            let (record, _) = nominal.run(p, x0, sim);
            return Ok(CorrectedRun { record, report: None });
        }
        Err(e) => return Err(e),
    };
    let measured = match meas_noise {
        Some(n) => measure(&x_i, n, seed, 0)?,
        None => x_i.position(),
    };
    let (windows, report) = plan_correction(nominal, cfg, measured)?;
    let record = if windows.iter().all(Window::is_empty) {
        nominal.run(p, x0, sim).0
    } else {
        let input = CorrectedInput::new(&nominal.schedule, windows, cfg.mode, report.held, nominal.bounds);
        integrate_outcome(p, x0, nominal.t_f, &input, sim).0
    };
    Ok(CorrectedRun {
        record,
        report: Some(report),
    })
}

/// Candidate values scanned by [`calibrate_correction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpace {
    /// Fractions of `t_f`.
    pub t_i: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c4: Vec<f64>,
    /// Fractions of `t_f`, shared by `c3` and `c5`.
    pub c35: Vec<f64>,
    pub mode: CorrectionMode,
}

impl Default for CalibrationSpace {
    fn default() -> Self {
        let log = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
        Self {
            t_i: vec![0.1, 0.15, 0.2, 0.25],
            c1: vec![1.0, 2.0, 4.0],
            c2: log.clone(),
            c4: log,
            c35: vec![0.01, 0.05, 0.1],
            mode: CorrectionMode::LiteralHold,
        }
    }
}

impl CalibrationSpace {
    fn candidates(&self, t_f: f64) -> Vec<CorrectionConfig> {
        let mut out = Vec::new();
        for &ti in &self.t_i {
            for &c1 in &self.c1 {
                for &c2 in &self.c2 {
                    for &c3 in &self.c35 {
                        for &c4 in &self.c4 {
                            for &c5 in &self.c35 {
                                out.push(CorrectionConfig {
                                    t_i: ti * t_f,
                                    c1,
                                    c2,
                                    c3: c3 * t_f,
                                    c4,
                                    c5: c5 * t_f,
                                    mode: self.mode,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Best configuration, or `None` when no candidate beat the uncorrected protocol.
    pub config: Option<CorrectionConfig>,
    /// Best candidate regardless of improvement, for diagnostics.
    pub best_candidate: CorrectionConfig,
    pub mre: f64,
    pub uncorrected_mre: f64,
    pub candidates_evaluated: usize,
}

/// Grid search over the correction constants minimizing the mean RE over `offsets`
/// (`(δθ, δr)` initial errors applied to the nominal start). Deterministic.
pub fn calibrate_correction(
    p: &SystemParams,
    nominal: &Protocol,
    offsets: &[(f64, f64)],
    space: &CalibrationSpace,
    sim: &SimConfig,
) -> Result<Calibration> {
    if offsets.is_empty() {
        return Err(Error::Config("calibration grid is empty".into()));
    }
    let t_f = nominal.t_f;
    let e_f = mechanical_energy(p, &integrate_terminal(p, &nominal.endpoints.start(), t_f, &nominal.schedule, sim.dt)?);
    let starts: Vec<State> = offsets
        .iter()
        .map(|(dth, dr)| {
            let s = nominal.endpoints.start();
            State::at_rest(s.theta + dth, s.r + dr)
        })
        .collect();
    let terminal_re = |x: &State| re_metric(e_f, mechanical_energy(p, x));
    let uncorrected: Vec<f64> = starts
        .par_iter()
        .map(|x0| integrate_terminal(p, x0, t_f, &nominal.schedule, sim.dt).and_then(|x| terminal_re(&x)))
        .collect::<Result<_>>()?;
    let uncorrected_mre = uncorrected.iter().sum::<f64>() / uncorrected.len() as f64;

    // Prefix states at each candidate measurement time, shared by all constants.
    let mut prefix: Vec<(f64, Vec<State>)> = Vec::new();
    for &frac in &space.t_i {
        let ti = frac * t_f;
        let xs = starts
            .par_iter()
            .map(|x0| integrate_terminal(p, x0, ti, &nominal.schedule, sim.dt))
            .collect::<Result<Vec<_>>>()?;
        prefix.push((ti, xs));
    }
    let candidates = space.candidates(t_f);
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|cfg| {
            let xs = &prefix.iter().find(|(ti, _)| *ti == cfg.t_i).expect("t_i from the same space").1;
            let mut total = 0.0;
            for (x_i, open_re) in xs.iter().zip(&uncorrected) {
                let Ok((windows, report)) = plan_correction(nominal, cfg, x_i.position()) else {
                    return f64::INFINITY;
                };
                if windows.iter().all(Window::is_empty) {
                    total += open_re;
                    continue;
                }
                let input = CorrectedInput::new(&nominal.schedule, windows, cfg.mode, report.held, nominal.bounds);
                match integrate_terminal_from(p, x_i, cfg.t_i, t_f, &input, sim.dt).and_then(|x| terminal_re(&x)) {
                    Ok(re) => total += re,
                    Err(_) => return f64::INFINITY,
                }
            }
            total / xs.len() as f64
        })
        .collect();
    let (best_idx, &best) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty candidate space");
    Ok(Calibration {
        config: (best <= uncorrected_mre).then_some(candidates[best_idx]),
        best_candidate: candidates[best_idx],
        mre: best,
        uncorrected_mre,
        candidates_evaluated: candidates.len(),
    })
}
