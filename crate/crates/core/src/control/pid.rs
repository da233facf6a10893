use serde::{Deserialize, Serialize};

use crate::dynamics::{inverse_dynamics, GenInput, State, SystemParams};
use crate::error::{Error, Result};
use crate::planners::ActuatorBounds;
use crate::simulate::{
    continue_record, measure, ControllerSample, FnInput, InputSchedule, InputSource, NoiseSpec, SimConfig, TrajectoryRecord,
};
use crate::trajectory::Reference;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl ChannelGains {
    fn is_valid(&self) -> bool {
        [self.kp, self.ki, self.kd].iter().all(|g| g.is_finite() && *g >= 0.0)
    }
}

/// Gains mapping angular error to torque and radial error to force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub theta: ChannelGains,
    pub r: ChannelGains,
}

impl PidGains {
    /// kp = 2.1e4, ki = 1.5e4, kd = 70 on both channels.
    pub const fn reference() -> Self {
        let g = ChannelGains {
            kp: 2.1e4,
            ki: 1.5e4,
            kd: 70.0,
        };
        Self { theta: g, r: g }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiWindup {
    /// Limit the integral contribution `|ki ∫e|` to the channel bound.
    #[default]
    ClampIntegrator,
    /// Freeze the integrator while the command is saturated in the direction of the error.
    ConditionalIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedforward {
    #[default]
    None,
    /// Add the inverse-dynamics input of the reference.
    NominalSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub gains: PidGains,
    pub dt_sample: f64,
    pub bounds: ActuatorBounds,
    pub anti_windup: AntiWindup,
    pub feedforward: Feedforward,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            gains: PidGains::reference(),
            dt_sample: 0.01,
            bounds: ActuatorBounds::nominal(),
            anti_windup: AntiWindup::default(),
            feedforward: Feedforward::default(),
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_sample > 0.0 && self.dt_sample.is_finite()) {
            return Err(Error::Config(format!("sampling time must be positive, got {}", self.dt_sample)));
        }
        if !(self.gains.theta.is_valid() && self.gains.r.is_valid()) {
            return Err(Error::Config("PID gains must be finite and non-negative".into()));
        }
        self.bounds.validate()
    }
}

/// Per-channel controller state.
#[derive(Debug, Clone, Copy, Default)]
struct Channel {
    integral: f64,
    prev_error: Option<f64>,
}

impl Channel {
    /// Returns the pre-clip command for error `e`, updating the integrator.
    fn update(&mut self, g: &ChannelGains, e: f64, dt: f64, ff: f64, u_max: f64, aw: AntiWindup) -> f64 {
        let de = self.prev_error.map_or(0.0, |p| (e - p) / dt);
        self.prev_error = Some(e);
        let candidate = self.integral + e * dt;
        match aw {
            AntiWindup::ClampIntegrator => {
                self.integral = if g.ki > 0.0 {
                    let lim = u_max / g.ki;
                    candidate.clamp(-lim, lim)
                } else {
                    candidate
                };
            }
            AntiWindup::ConditionalIntegration => {
                let with = g.kp * e + g.ki * candidate + g.kd * de + ff;
                let pushes_out = with.abs() > u_max && with * e > 0.0;
                if !pushes_out {
                    self.integral = candidate;
                }
            }
        }
        g.kp * e + g.ki * self.integral + g.kd * de + ff
    }
}

/// Discrete-time PID tracking of `reference` on the plant `p`.
///
/// The command is recomputed every `cfg.dt_sample` from (optionally noisy) position
/// measurements, clipped to the bounds, and held while the plant is integrated at `sim.dt`.
/// An abort (radius collapse) is reported through `aborted_at` on the returned record.
pub fn pid_track(
    p: &SystemParams,
    reference: &dyn Reference,
    cfg: &PidConfig,
    x0: &State,
    noise: Option<&NoiseSpec>,
    seed: u64,
    sim: &SimConfig,
) -> Result<TrajectoryRecord> {
    pid_track_disturbed(p, reference, cfg, x0, noise, None, seed, sim)
}

/// [`pid_track`] with an additive input disturbance acting after the actuator clip.
///
/// The recorded `tau`, `f` columns are the inputs the plant actually received.
#[allow(clippy::too_many_arguments)]
pub fn pid_track_disturbed(
    p: &SystemParams,
    reference: &dyn Reference,
    cfg: &PidConfig,
    x0: &State,
    noise: Option<&NoiseSpec>,
    disturbance: Option<&InputSchedule>,
    seed: u64,
    sim: &SimConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let t_f = reference.duration();
    sim.validate(t_f)?;
    if let Some(n) = noise {
        n.validate()?;
    }
    let mut rec = TrajectoryRecord::default();
    let mut ctrl = Vec::new();
    let mut chans = [Channel::default(); 2];
    let mut x = *x0;
    let mut k: u64 = 0;
    let mut t = 0.0;
    loop {
        let y = match noise {
            Some(n) => measure(&x, n, seed, k)?,
            None => x.position(),
        };
        let kin = reference.kin_at(t)?;
        let ff = match cfg.feedforward {
            Feedforward::None => GenInput::ZERO,
            Feedforward::NominalSchedule => inverse_dynamics(p, &kin)?,
        };
        let e = [kin.q.theta - y.theta, kin.q.r - y.r];
        let tau_cmd = chans[0].update(&cfg.gains.theta, e[0], cfg.dt_sample, ff.tau, cfg.bounds.tau_max, cfg.anti_windup);
        let f_cmd = chans[1].update(&cfg.gains.r, e[1], cfg.dt_sample, ff.f, cfg.bounds.f_max, cfg.anti_windup);
        let u = cfg.bounds.clip(GenInput::new(tau_cmd, f_cmd));
        let cs = ControllerSample {
            tau_cmd_preclip: tau_cmd,
            f_cmd_preclip: f_cmd,
            e_theta: e[0],
            e_r: e[1],
        };
        let applied = FnInput(|s: f64| match disturbance {
            Some(d) => {
                let w = d.eval(s);
                GenInput::new(u.tau + w.tau, u.f + w.f)
            }
            None => u,
        });
        if k == 0 {
            rec.push(p, 0.0, x, applied.input_at(0.0));
            ctrl.push(cs);
        }
        let t_next = ((k + 1) as f64 * cfg.dt_sample).min(t_f);
        let outcome = continue_record(p, &mut rec, t_next, &applied, sim.dt);
        ctrl.resize(rec.samples.len(), cs);
        if outcome.is_err() {
            break;
        }
        x = rec.terminal;
        k += 1;
        t = t_next;
        if t_f - t <= 1e-12 * t_f {
            break;
        }
    }
    rec.controller = Some(ctrl);
    Ok(rec)
}
