//! Open-loop protocol synthesis by inverse dynamics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{gravity_vector, inverse_dynamics, Config2, GenInput, KinPoint, State, SystemParams};
use crate::error::{Error, Result};
use crate::simulate::{integrate_outcome, InputSchedule, InterpMode, SimConfig, TrajectoryRecord};
use crate::trajectory::{
    synchronize_profiles, trapezoid_min_time, PolynomialProfile, Reference, ShapeOrder,
    TrapezoidTrajectory,
};

/// Box bounds `|τ| ≤ tau_max`, `|f| ≤ f_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorBounds {
    pub tau_max: f64,
    pub f_max: f64,
}

impl ActuatorBounds {
    pub fn new(tau_max: f64, f_max: f64) -> Result<Self> {
        let b = Self { tau_max, f_max };
        b.validate()?;
        Ok(b)
    }

    /// 600 kg·m²/s², 150 N.
    pub const fn nominal() -> Self {
        Self {
            tau_max: 600.0,
            f_max: 150.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0 && self.f_max > 0.0) {
            return Err(Error::Config("actuator bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, u: &GenInput) -> bool {
        u.tau.abs() <= self.tau_max && u.f.abs() <= self.f_max
    }

    pub fn clip(&self, u: GenInput) -> GenInput {
        GenInput::new(
            u.tau.clamp(-self.tau_max, self.tau_max),
            u.f.clamp(-self.f_max, self.f_max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicBounds {
    pub dtheta_max: f64,
    pub ddtheta_max: f64,
    pub dr_max: f64,
    pub ddr_max: f64,
}

impl KinematicBounds {
    /// (0.4 rad/s, 0.3 rad/s², 1.5 m/s, 1.2 m/s²).
    pub const fn nominal() -> Self {
        Self {
            dtheta_max: 0.4,
            ddtheta_max: 0.3,
            dr_max: 1.5,
            ddr_max: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.dtheta_max, self.ddtheta_max, self.dr_max, self.ddr_max];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("kinematic bounds must be positive".into()));
        }
        Ok(())
    }

    /// Whether `k` satisfies all four bounds up to a relative slack.
    pub fn admits(&self, k: &KinPoint, rel_slack: f64) -> bool {
        let s = 1.0 + rel_slack;
        k.dq.theta.abs() <= self.dtheta_max * s
            && k.ddq.theta.abs() <= self.ddtheta_max * s
            && k.dq.r.abs() <= self.dr_max * s
            && k.ddq.r.abs() <= self.ddr_max * s
    }
}

/// Start and goal configurations of a rest-to-rest transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub q0: Config2,
    pub qf: Config2,
}

impl Endpoints {
    /// (0°, 1 m) → (45°, 4 m).
    pub fn nominal() -> Self {
        Self {
            q0: Config2::new(0.0, 1.0),
            qf: Config2::new(std::f64::consts::FRAC_PI_4, 4.0),
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            q0: self.qf,
            qf: self.q0,
        }
    }

    pub fn start(&self) -> State {
        State::at_rest(self.q0.theta, self.q0.r)
    }

    pub fn goal(&self) -> State {
        State::at_rest(self.qf.theta, self.qf.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolLabel {
    StaQuintic,
    StaSeventh,
    ConstraintLimited,
    TimeOptimal,
    Pid,
    StaCorrected,
}

impl ProtocolLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolLabel::StaQuintic => "sta_quintic",
            ProtocolLabel::StaSeventh => "sta_seventh",
            ProtocolLabel::ConstraintLimited => "constraint_limited",
            ProtocolLabel::TimeOptimal => "time_optimal",
            ProtocolLabel::Pid => "pid",
            ProtocolLabel::StaCorrected => "sta_corrected",
        }
    }
}

/// Reference trajectory that produced a protocol, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceTrajectory {
    Polynomial(PolynomialProfile),
    Trapezoid(TrapezoidTrajectory),
}

impl Reference for ReferenceTrajectory {
    fn duration(&self) -> f64 {
        match self {
            ReferenceTrajectory::Polynomial(p) => p.duration(),
            ReferenceTrajectory::Trapezoid(t) => t.duration(),
        }
    }

    fn kin_at(&self, t: f64) -> Result<KinPoint> {
        match self {
            ReferenceTrajectory::Polynomial(p) => p.kin_at(t),
            ReferenceTrajectory::Trapezoid(tr) => tr.kin_at(t),
        }
    }
}

/// An open-loop input schedule together with what it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub label: ProtocolLabel,
    pub schedule: InputSchedule,
    pub reference: Option<ReferenceTrajectory>,
    pub t_f: f64,
    pub params: SystemParams,
    pub endpoints: Endpoints,
    pub bounds: Option<ActuatorBounds>,
    pub kinematic_bounds: Option<KinematicBounds>,
}

impl Protocol {
    /// Integrates the schedule from `x0` over `[0, t_f]`; returns the record and any abort.
    pub fn run(&self, plant: &SystemParams, x0: &State, cfg: &SimConfig) -> (TrajectoryRecord, Option<Error>) {
        if self.t_f == 0.0 {
            let mut rec = TrajectoryRecord::default();
            rec.push(plant, 0.0, *x0, self.schedule.node(0));
            rec.finish(plant, *x0);
            return (rec, None);
        }
        integrate_outcome(plant, x0, self.t_f, &self.schedule, cfg)
    }

    /// Nominal run from the designed start on the design plant.
    pub fn nominal_run(&self, cfg: &SimConfig) -> Result<TrajectoryRecord> {
        match self.run(&self.params, &self.endpoints.start(), cfg) {
            (rec, None) => Ok(rec),
            (_, Some(e)) => Err(e),
        }
    }

    /// Zero-length protocol holding gravity at `q`.
    pub fn zero_duration(label: ProtocolLabel, p: &SystemParams, q: Config2) -> Result<Self> {
        let g = gravity_vector(p, q)?;
        Ok(Self {
            label,
            schedule: InputSchedule::instant(g),
            reference: None,
            t_f: 0.0,
            params: *p,
            endpoints: Endpoints { q0: q, qf: q },
            bounds: None,
            kinematic_bounds: None,
        })
    }
}

/// Samples the reference uniformly and maps each point through inverse dynamics.
pub fn sta_inputs(p: &SystemParams, profile: &PolynomialProfile, n_samples: usize) -> Result<Protocol> {
    if n_samples < 100 {
        return Err(Error::Config(format!("need at least 100 samples, got {n_samples}")));
    }
    let schedule = InputSchedule::from_fn(profile.t_f, n_samples, InterpMode::PiecewiseLinear, |t| {
        inverse_dynamics(p, &profile.eval(t)?)
    })?;
    Ok(Protocol {
        label: match profile.order {
            ShapeOrder::Quintic => ProtocolLabel::StaQuintic,
            ShapeOrder::Seventh => ProtocolLabel::StaSeventh,
        },
        schedule,
        reference: Some(ReferenceTrajectory::Polynomial(*profile)),
        t_f: profile.t_f,
        params: *p,
        endpoints: Endpoints {
            q0: profile.q0,
            qf: profile.qf,
        },
        bounds: None,
        kinematic_bounds: None,
    })
}

/// Search settings for [`min_feasible_tf_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinTfOptions {
    pub bracket: (f64, f64),
    /// Dense samples per candidate duration.
    pub samples: usize,
    /// Points of the monotonicity scan.
    pub scan_points: usize,
}

impl Default for MinTfOptions {
    fn default() -> Self {
        Self {
            bracket: (0.5, 20.0),
            samples: 4001,
            scan_points: 50,
        }
    }
}

/// Peak `(|τ|, |f|)` of the inverse-dynamics input over `samples` uniform points.
pub fn peak_inputs(p: &SystemParams, profile: &PolynomialProfile, samples: usize) -> Result<(f64, f64)> {
    let n = samples.max(2);
    let mut peak = (0.0f64, 0.0f64);
    for k in 0..n {
        let t = profile.t_f * k as f64 / (n - 1) as f64;
        let u = inverse_dynamics(p, &profile.eval(t.min(profile.t_f))?)?;
        peak.0 = peak.0.max(u.tau.abs());
        peak.1 = peak.1.max(u.f.abs());
    }
    Ok(peak)
}

fn feasible(
    p: &SystemParams,
    order: ShapeOrder,
    ends: &Endpoints,
    bounds: &ActuatorBounds,
    t_f: f64,
    samples: usize,
) -> Result<bool> {
    let prof = PolynomialProfile::new(order, ends.q0, ends.qf, t_f)?;
    let (pt, pf) = peak_inputs(p, &prof, samples)?;
    Ok(pt <= bounds.tau_max && pf <= bounds.f_max)
}

/// Smallest polynomial-STA duration whose inputs stay within `bounds` (default search settings).
pub fn min_feasible_tf(
    p: &SystemParams,
    order: ShapeOrder,
    ends: &Endpoints,
    bounds: &ActuatorBounds,
    tol: f64,
) -> Result<f64> {
    min_feasible_tf_with(p, order, ends, bounds, tol, &MinTfOptions::default())
}

pub fn min_feasible_tf_with(
    p: &SystemParams,
    order: ShapeOrder,
    ends: &Endpoints,
    bounds: &ActuatorBounds,
    tol: f64,
    opts: &MinTfOptions,
) -> Result<f64> {
    bounds.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let (lo, hi) = opts.bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("invalid bracket [{lo}, {hi}]")));
    }
    for q in [ends.q0, ends.qf] {
        if !bounds.contains(&gravity_vector(p, q)?) {
            return Err(Error::Infeasible(format!(
                "static input at ({}, {}) exceeds the actuator bounds",
                q.theta, q.r
            )));
        }
    }

    let n_scan = opts.scan_points.max(2);
    let scan: Vec<(f64, bool)> = (0..n_scan)
        .into_par_iter()
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / (n_scan - 1) as f64;
            feasible(p, order, ends, bounds, t, opts.samples).map(|ok| (t, ok))
        })
        .collect::<Result<_>>()?;
    let first_ok = scan.iter().position(|(_, ok)| *ok);
    let Some(first_ok) = first_ok else {
        return Err(Error::Infeasible(format!(
            "no duration in [{lo}, {hi}] s satisfies the bounds"
        )));
    };
    if scan[first_ok..].iter().any(|(_, ok)| !ok) {
        return Err(Error::NonMonotone { lo, hi, scan });
    }
    if first_ok == 0 {
        return Ok(lo);
    }

    let (mut a, mut b) = (scan[first_ok - 1].0, scan[first_ok].0);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if feasible(p, order, ends, bounds, mid, opts.samples)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    let certified = feasible(p, order, ends, bounds, b, opts.samples)?
        && (b - tol < lo || !feasible(p, order, ends, bounds, b - tol, opts.samples)?);
    if !certified {
        return Err(Error::NonMonotone { lo: a, hi: b, scan });
    }
    Ok(b)
}

/// Fastest synchronized bang-off-bang transfer within kinematic bounds.
pub fn constraint_limited_protocol(
    p: &SystemParams,
    ends: &Endpoints,
    kb: &KinematicBounds,
) -> Result<Protocol> {
    constraint_limited_protocol_with(p, ends, kb, 4001)
}

pub fn constraint_limited_protocol_with(
    p: &SystemParams,
    ends: &Endpoints,
    kb: &KinematicBounds,
    n_samples: usize,
) -> Result<Protocol> {
    kb.validate()?;
    let d_theta = ends.qf.theta - ends.q0.theta;
    let d_r = ends.qf.r - ends.q0.r;
    if d_theta == 0.0 && d_r == 0.0 {
        let mut proto = Protocol::zero_duration(ProtocolLabel::ConstraintLimited, p, ends.q0)?;
        proto.kinematic_bounds = Some(*kb);
        return Ok(proto);
    }
    let th = trapezoid_min_time(d_theta, kb.dtheta_max, kb.ddtheta_max)?;
    let r = trapezoid_min_time(d_r, kb.dr_max, kb.ddr_max)?;
    let (th, r) = if th.total_time() >= r.total_time() {
        (th, synchronize_profiles(&th, &r)?)
    } else {
        (synchronize_profiles(&r, &th)?, r)
    };
    let traj = TrapezoidTrajectory { q0: ends.q0, theta: th, r };
    let t_f = traj.duration();
    let schedule = InputSchedule::from_fn(t_f, n_samples.max(2), InterpMode::PiecewiseLinear, |t| {
        inverse_dynamics(p, &traj.eval(t)?)
    })?;
    Ok(Protocol {
        label: ProtocolLabel::ConstraintLimited,
        schedule,
        reference: Some(ReferenceTrajectory::Trapezoid(traj)),
        t_f,
        params: *p,
        endpoints: *ends,
        bounds: None,
        kinematic_bounds: Some(*kb),
    })
}

/// Serialized form of a protocol (`protocol-v1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDocument {
    pub schema: String,
    pub label: ProtocolLabel,
    pub t_f: f64,
    pub mode: InterpMode,
    pub times: Vec<f64>,
    pub tau: Vec<f64>,
    pub f: Vec<f64>,
    pub metadata: ProtocolMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMetadata {
    pub params: SystemParams,
    pub endpoints: Endpoints,
    pub bounds: Option<ActuatorBounds>,
    #[serde(default)]
    pub kinematic_bounds: Option<KinematicBounds>,
    #[serde(default)]
    pub reference: Option<ReferenceTrajectory>,
    /// Free-form provenance (config hash, artifact version).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub const PROTOCOL_SCHEMA: &str = "protocol-v1";

impl Protocol {
    pub fn to_document(&self) -> ProtocolDocument {
        ProtocolDocument {
            schema: PROTOCOL_SCHEMA.to_string(),
            label: self.label,
            t_f: self.t_f,
            mode: self.schedule.mode(),
            times: self.schedule.times().to_vec(),
            tau: self.schedule.tau_values().to_vec(),
            f: self.schedule.f_values().to_vec(),
            metadata: ProtocolMetadata {
                params: self.params,
                endpoints: self.endpoints,
                bounds: self.bounds,
                kinematic_bounds: self.kinematic_bounds,
                reference: self.reference,
                provenance: None,
            },
            diagnostics: None,
        }
    }

    pub fn from_document(doc: ProtocolDocument) -> Result<Self> {
        if doc.schema != PROTOCOL_SCHEMA {
            return Err(Error::Config(format!("unsupported protocol schema {:?}", doc.schema)));
        }
        doc.metadata.params.validate()?;
        let schedule = if doc.times.len() == 1 {
            if doc.t_f != 0.0 || doc.times[0] != 0.0 || doc.tau.len() != 1 || doc.f.len() != 1 {
                return Err(Error::Config("single-node schedule must be a zero-duration protocol".into()));
            }
            InputSchedule::instant(GenInput::new(doc.tau[0], doc.f[0]))
        } else {
            InputSchedule::new(doc.times, doc.tau, doc.f, doc.mode)?
        };
        if (schedule.t_end() - doc.t_f).abs() > 1e-12 * doc.t_f.max(1.0) {
            return Err(Error::Config(format!(
                "schedule ends at {} but t_f = {}",
                schedule.t_end(),
                doc.t_f
            )));
        }
        Ok(Self {
            label: doc.label,
            t_f: doc.t_f,
            schedule,
            reference: doc.metadata.reference,
            params: doc.metadata.params,
            endpoints: doc.metadata.endpoints,
            bounds: doc.metadata.bounds,
            kinematic_bounds: doc.metadata.kinematic_bounds,
        })
    }
}
