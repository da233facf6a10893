//! Relative final-energy error and the Monte Carlo harnesses built on it.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{pid_track, pid_track_disturbed, PidConfig};
use crate::dynamics::{inverse_dynamics, mechanical_energy, GenInput, State, SystemParams};
use crate::error::{Error, Result};
use crate::planners::Protocol;
use crate::simulate::{
    derive_seed, format_sig, integrate_terminal, perturb_schedule, FnInput, InputSchedule, InterpMode, NoiseKind,
    NoiseSpec, SimConfig, TrajectoryRecord,
};
use crate::trajectory::{PolynomialProfile, Reference};

/// `|(e_delta − e_f) / e_f|`.
pub fn re_metric(e_f: f64, e_delta: f64) -> Result<f64> {
    if e_f == 0.0 || !e_f.is_finite() {
        return Err(Error::UndefinedMetric(format!("nominal final energy is {e_f}")));
    }
    Ok(((e_delta - e_f) / e_f).abs())
}

/// Rectangular grid of initial errors `(δθ, δr)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// `[min, max]` in rad.
    pub theta_range: [f64; 2],
    pub theta_count: usize,
    /// `[min, max]` in m.
    pub r_range: [f64; 2],
    pub r_count: usize,
}

impl GridSpec {
    /// 21×21 over ±π/1800 rad × ±0.01 m.
    pub fn standard() -> Self {
        Self::symmetric(std::f64::consts::PI / 1800.0, 0.01, 21)
    }

    pub fn symmetric(d_theta: f64, d_r: f64, count: usize) -> Self {
        Self {
            theta_range: [-d_theta, d_theta],
            theta_count: count,
            r_range: [-d_r, d_r],
            r_count: count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("theta", self.theta_count), ("r", self.r_count)] {
            if n < 3 || n % 2 == 0 {
                return Err(Error::Config(format!("{name} count must be odd and at least 3, got {n}")));
            }
        }
        for (name, [lo, hi]) in [("theta", self.theta_range), ("r", self.r_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty or not finite")));
            }
        }
        Ok(())
    }

    fn axis(range: [f64; 2], n: usize) -> Vec<f64> {
        let mid = (n - 1) / 2;
        (0..n)
            .map(|k| {
                if k == mid && range[0] == -range[1] {
                    0.0
                } else {
                    range[0] + (range[1] - range[0]) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Offsets in row-major order: θ outer, r inner.
    pub fn offsets(&self) -> Vec<(f64, f64)> {
        let th = Self::axis(self.theta_range, self.theta_count);
        let r = Self::axis(self.r_range, self.r_count);
        th.iter().flat_map(|&a| r.iter().map(move |&b| (a, b))).collect()
    }
}

/// Terminal state of a run and where it aborted, if it did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub terminal: State,
    pub aborted_at: Option<f64>,
}

impl From<&TrajectoryRecord> for RunOutcome {
    fn from(rec: &TrajectoryRecord) -> Self {
        Self {
            terminal: rec.terminal,
            aborted_at: rec.aborted_at,
        }
    }
}

fn outcome_of(res: Result<State>) -> Result<RunOutcome> {
    match res {
        Ok(terminal) => Ok(RunOutcome {
            terminal,
            aborted_at: None,
        }),
        Err(Error::Aborted { time, .. }) => Ok(RunOutcome {
            terminal: State::default(),
            aborted_at: Some(time),
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportSpec {
    InitialErrorGrid {
        grid: GridSpec,
    },
    Trials {
        n_trials: usize,
        noise: NoiseSpec,
        /// Maximum node spacing the schedule was refined to before perturbation.
        noise_spacing: Option<f64>,
        master_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub d_theta: f64,
    pub d_r: f64,
    /// Trial seed; absent for grid cells.
    pub seed: Option<u64>,
    /// `None` for aborted runs.
    pub re: Option<f64>,
    pub final_state: State,
    pub aborted_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub label: String,
    pub spec: ReportSpec,
    /// Final energy of the unperturbed run (J).
    pub e_f: f64,
    pub cells: Vec<Cell>,
    /// Mean RE over non-aborted cells; `NaN` when every run aborted.
    pub mre: f64,
    /// Indices of aborted cells.
    pub aborted: Vec<usize>,
}

impl RobustnessReport {
    fn assemble(label: String, spec: ReportSpec, e_f: f64, cells: Vec<Cell>) -> Self {
        let res: Vec<f64> = cells.iter().filter_map(|c| c.re).collect();
        let mre = if res.is_empty() {
            f64::NAN
        } else {
            res.iter().sum::<f64>() / res.len() as f64
        };
        let aborted = cells.iter().filter(|c| c.re.is_none()).map(|c| c.index).collect();
        Self {
            label,
            spec,
            e_f,
            cells,
            mre,
            aborted,
        }
    }

    pub fn max_re(&self) -> f64 {
        self.cells.iter().filter_map(|c| c.re).fold(0.0, f64::max)
    }

    /// RE of the cell closest to `(d_theta, d_r)`.
    pub fn re_near(&self, d_theta: f64, d_r: f64) -> Option<f64> {
        self.cells
            .iter()
            .min_by(|a, b| {
                let da = ((a.d_theta - d_theta) / 1e-3).hypot((a.d_r - d_r) / 1e-2);
                let db = ((b.d_theta - d_theta) / 1e-3).hypot((b.d_r - d_r) / 1e-2);
                da.total_cmp(&db)
            })
            .and_then(|c| c.re)
    }

    /// `d_theta,d_r,RE` for grids, `trial,RE,theta_f,r_f` for trials. Aborted rows leave RE empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let re = |c: &Cell| c.re.map(format_sig).unwrap_or_default();
        match self.spec {
            ReportSpec::InitialErrorGrid { .. } => {
                writeln!(w, "d_theta,d_r,RE")?;
                for c in &self.cells {
                    writeln!(w, "{},{},{}", format_sig(c.d_theta), format_sig(c.d_r), re(c))?;
                }
            }
            ReportSpec::Trials { .. } => {
                writeln!(w, "trial,RE,theta_f,r_f")?;
                for c in &self.cells {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        c.index,
                        re(c),
                        format_sig(c.final_state.theta),
                        format_sig(c.final_state.r)
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn nominal_energy(p: &SystemParams, nominal: RunOutcome) -> Result<f64> {
    if let Some(t) = nominal.aborted_at {
        return Err(Error::Aborted {
            time: t,
            reason: "the unperturbed reference run aborted".into(),
        });
    }
    Ok(mechanical_energy(p, &nominal.terminal))
}

fn make_cell(p: &SystemParams, e_f: f64, index: usize, offset: (f64, f64), seed: Option<u64>, out: RunOutcome) -> Result<Cell> {
    let re = match out.aborted_at {
        Some(_) => None,
        None => Some(re_metric(e_f, mechanical_energy(p, &out.terminal))?),
    };
    Ok(Cell {
        index,
        d_theta: offset.0,
        d_r: offset.1,
        seed,
        re,
        final_state: out.terminal,
        aborted_at: out.aborted_at,
    })
}

/// Initial-error grid for an arbitrary runner, open- or closed-loop.
///
/// `run` maps a start state to its outcome; `E_f` is taken from the unperturbed `start`.
pub fn initial_error_grid_with<F>(p: &SystemParams, label: &str, start: &State, grid: &GridSpec, run: F) -> Result<RobustnessReport>
where
    F: Fn(&State) -> Result<RunOutcome> + Sync,
{
    grid.validate()?;
    let e_f = nominal_energy(p, run(start)?)?;
    let cells = grid
        .offsets()
        .into_par_iter()
        .enumerate()
        .map(|(k, (dth, dr))| {
            let x0 = State::new(start.theta + dth, start.r + dr, start.dtheta, start.dr);
            make_cell(p, e_f, k, (dth, dr), None, run(&x0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport::assemble(
        label.to_owned(),
        ReportSpec::InitialErrorGrid { grid: *grid },
        e_f,
        cells,
    ))
}

/// Open-loop protocol applied unchanged from each perturbed start on plant `p`.
pub fn initial_error_grid(p: &SystemParams, protocol: &Protocol, grid: &GridSpec, sim: &SimConfig) -> Result<RobustnessReport> {
    sim.validate(protocol.t_f)?;
    initial_error_grid_with(p, protocol.label.as_str(), &protocol.endpoints.start(), grid, |x0| {
        outcome_of(integrate_terminal(p, x0, protocol.t_f, &protocol.schedule, sim.dt))
    })
}

/// PID tracking of `reference` from each perturbed start.
pub fn pid_initial_error_grid(
    p: &SystemParams,
    reference: &dyn Reference,
    cfg: &PidConfig,
    start: &State,
    grid: &GridSpec,
    sim: &SimConfig,
) -> Result<RobustnessReport> {
    initial_error_grid_with(p, "pid", start, grid, |x0| {
        pid_track(p, reference, cfg, x0, None, 0, sim).map(|rec| RunOutcome::from(&rec))
    })
}

/// Seeded Monte Carlo over `n_trials`; trial `k` runs with `derive_seed(master_seed, k)`.
///
/// `E_f` comes from `nominal`, the noise-free counterpart of `run`.
pub fn trials_with<F>(
    p: &SystemParams,
    label: &str,
    nominal: RunOutcome,
    n_trials: usize,
    noise: &NoiseSpec,
    master_seed: u64,
    run: F,
) -> Result<RobustnessReport>
where
    F: Fn(u64) -> Result<RunOutcome> + Sync,
{
    if n_trials < 100 {
        return Err(Error::Config(format!("at least 100 trials are required, got {n_trials}")));
    }
    noise.validate()?;
    let e_f = nominal_energy(p, nominal)?;
    let cells = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(master_seed, k as u64);
            make_cell(p, e_f, k, (0.0, 0.0), Some(seed), run(seed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport::assemble(
        label.to_owned(),
        ReportSpec::Trials {
            n_trials,
            noise: *noise,
            noise_spacing: None,
            master_seed,
        },
        e_f,
        cells,
    ))
}

/// Per-node input noise added to the protocol's schedule, run from the nominal start.
///
/// With `noise_spacing`, the schedule is first refined (without changing the input) so
/// that noise is drawn at least that often; protocols stored on different grids then see
/// white noise of comparable bandwidth.
pub fn input_noise_trials(
    p: &SystemParams,
    protocol: &Protocol,
    n_trials: usize,
    noise: &NoiseSpec,
    noise_spacing: Option<f64>,
    master_seed: u64,
    sim: &SimConfig,
) -> Result<RobustnessReport> {
    if noise.kind != NoiseKind::Input {
        return Err(Error::Config("input-noise trials need input noise".into()));
    }
    sim.validate(protocol.t_f)?;
    let x0 = protocol.endpoints.start();
    let nominal = outcome_of(integrate_terminal(p, &x0, protocol.t_f, &protocol.schedule, sim.dt))?;
    let base = match noise_spacing {
        Some(h) => protocol.schedule.refined(h)?,
        None => protocol.schedule.clone(),
    };
    let mut rep = trials_with(p, protocol.label.as_str(), nominal, n_trials, noise, master_seed, |seed| {
        let sched = perturb_schedule(&base, noise, seed)?;
        outcome_of(integrate_terminal(p, &x0, protocol.t_f, &sched, sim.dt))
    })?;
    if let ReportSpec::Trials { noise_spacing: ns, .. } = &mut rep.spec {
        *ns = noise_spacing;
    }
    Ok(rep)
}

/// PID tracking with noisy position measurements; `E_f` is the noise-free tracking run.
pub fn measurement_noise_trials(
    p: &SystemParams,
    reference: &dyn Reference,
    cfg: &PidConfig,
    start: &State,
    n_trials: usize,
    noise: &NoiseSpec,
    master_seed: u64,
    sim: &SimConfig,
) -> Result<RobustnessReport> {
    if noise.kind != NoiseKind::Measurement {
        return Err(Error::Config("measurement-noise trials need measurement noise".into()));
    }
    let nominal = RunOutcome::from(&pid_track(p, reference, cfg, start, None, 0, sim)?);
    trials_with(p, "pid", nominal, n_trials, noise, master_seed, |seed| {
        pid_track(p, reference, cfg, start, Some(noise), seed, sim).map(|rec| RunOutcome::from(&rec))
    })
}

/// PID tracking under an additive input disturbance drawn every `noise_spacing` seconds
/// and interpolated linearly, the same noise model [`input_noise_trials`] applies to a
/// refined open-loop schedule. `E_f` is the undisturbed tracking run.
#[allow(clippy::too_many_arguments)]
pub fn pid_input_noise_trials(
    p: &SystemParams,
    reference: &dyn Reference,
    cfg: &PidConfig,
    start: &State,
    n_trials: usize,
    noise: &NoiseSpec,
    noise_spacing: f64,
    master_seed: u64,
    sim: &SimConfig,
) -> Result<RobustnessReport> {
    if noise.kind != NoiseKind::Input {
        return Err(Error::Config("input-noise trials need input noise".into()));
    }
    if !(noise_spacing > 0.0) {
        return Err(Error::Config(format!("noise spacing must be positive, got {noise_spacing}")));
    }
    let t_f = reference.duration();
    let nodes = (t_f / noise_spacing).ceil() as usize + 1;
    let quiet = InputSchedule::from_fn(t_f, nodes.max(2), InterpMode::PiecewiseLinear, |_| Ok(GenInput::ZERO))?;
    let nominal = RunOutcome::from(&pid_track(p, reference, cfg, start, None, 0, sim)?);
    let mut rep = trials_with(p, "pid", nominal, n_trials, noise, master_seed, |seed| {
        let d = perturb_schedule(&quiet, noise, seed)?;
        pid_track_disturbed(p, reference, cfg, start, None, Some(&d), seed, sim).map(|rec| RunOutcome::from(&rec))
    })?;
    if let ReportSpec::Trials { noise_spacing: ns, .. } = &mut rep.spec {
        *ns = Some(noise_spacing);
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingMode {
    /// Inputs re-derived for every scanned damping pair.
    Matched,
    /// Inputs derived at the base damping, applied to every scanned plant.
    Mismatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationMap {
    pub mode: DampingMode,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    /// Target energy at the goal configuration (J).
    pub e_target: f64,
    /// `re[i][j]` at `(b1[i], b2[j])`; `None` where the run aborted.
    pub re: Vec<Vec<Option<f64>>>,
}

impl DissipationMap {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "B1,B2,RE")?;
        for (i, b1) in self.b1.iter().enumerate() {
            for (j, b2) in self.b2.iter().enumerate() {
                let re = self.re[i][j].map(format_sig).unwrap_or_default();
                writeln!(w, "{},{},{re}", format_sig(*b1), format_sig(*b2))?;
            }
        }
        Ok(())
    }
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    (0..n).map(|k| range[0] + (range[1] - range[0]) * k as f64 / (n - 1) as f64).collect()
}

/// Runs the smooth STA of `profile` over a grid of damping pairs.
///
/// The input is the exact inverse-dynamics law evaluated at every integrator stage, so
/// in matched mode RE is the integration residual alone. RE is measured against the
/// rest energy at the goal.
pub fn dissipation_scan(
    p_base: &SystemParams,
    profile: &PolynomialProfile,
    b1_range: [f64; 2],
    b2_range: [f64; 2],
    counts: [usize; 2],
    mode: DampingMode,
    sim: &SimConfig,
) -> Result<DissipationMap> {
    if counts.iter().any(|&n| n < 5) {
        return Err(Error::Config(format!("damping scan needs at least 5 points per axis, got {counts:?}")));
    }
    for [lo, hi] in [b1_range, b2_range] {
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("damping range [{lo}, {hi}] is invalid")));
        }
    }
    let t_f = profile.duration();
    sim.validate(t_f)?;
    let x0 = State::at_rest(profile.q0.theta, profile.q0.r);
    let goal = State::at_rest(profile.qf.theta, profile.qf.r);
    let e_target = mechanical_energy(p_base, &goal);
    let b1 = linspace(b1_range, counts[0]);
    let b2 = linspace(b2_range, counts[1]);
    let pairs: Vec<(f64, f64)> = b1.iter().flat_map(|&a| b2.iter().map(move |&b| (a, b))).collect();
    let flat = pairs
        .par_iter()
        .map(|&(d1, d2)| {
            let plant = p_base.with_damping(d1, d2);
            let design = match mode {
                DampingMode::Matched => plant,
                DampingMode::Mismatched => *p_base,
            };
            let input = FnInput(|t: f64| {
                profile
                    .kin_at(t.clamp(0.0, t_f))
                    .and_then(|k| inverse_dynamics(&design, &k))
                    .unwrap_or(GenInput::ZERO)
            });
            match outcome_of(integrate_terminal(&plant, &x0, t_f, &input, sim.dt))? {
                RunOutcome { aborted_at: Some(_), .. } => Ok(None),
                RunOutcome { terminal, .. } => re_metric(e_target, mechanical_energy(&plant, &terminal)).map(Some),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let re = flat.chunks(counts[1]).map(<[_]>::to_vec).collect();
    Ok(DissipationMap {
        mode,
        b1,
        b2,
        e_target,
        re,
    })
}
