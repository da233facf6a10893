//! JSON run configuration. Angles carry a mandatory `"deg"`/`"rad"` unit tag and are
//! converted to radians here; everything else is SI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rtheta::control::{CalibrationSpace, CorrectionConfig, PidConfig};
use rtheta::dynamics::{Config2, State, SystemParams};
use rtheta::planners::{ActuatorBounds, Endpoints, KinematicBounds};
use rtheta::robustness::{DampingMode, GridSpec};
use rtheta::simulate::{NoiseDistribution, NoiseKind, NoiseSpec, SimConfig};
use rtheta::timeopt::EndpointAccel;
use rtheta::trajectory::ShapeOrder;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    Deg,
    Rad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Angle {
    pub value: f64,
    pub unit: AngleUnit,
}

impl Angle {
    pub const fn deg(value: f64) -> Self {
        Self { value, unit: AngleUnit::Deg }
    }

    pub const fn rad(value: f64) -> Self {
        Self { value, unit: AngleUnit::Rad }
    }

    pub fn radians(&self) -> f64 {
        match self.unit {
            AngleUnit::Deg => self.value.to_radians(),
            AngleUnit::Rad => self.value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transfer {
    pub theta0: Angle,
    pub thetaf: Angle,
    pub r0: f64,
    pub rf: f64,
}

impl Default for Transfer {
    fn default() -> Self {
        Self {
            theta0: Angle::deg(0.0),
            thetaf: Angle::deg(45.0),
            r0: 1.0,
            rf: 4.0,
        }
    }
}

impl Transfer {
    pub fn endpoints(&self) -> Endpoints {
        Endpoints {
            q0: Config2::new(self.theta0.radians(), self.r0),
            qf: Config2::new(self.thetaf.radians(), self.rf),
        }
    }
}

/// Which open-loop protocol a command works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    /// Polynomial STA; without `t_f` the shortest duration within the actuator bounds is used.
    Sta {
        order: ShapeOrder,
        #[serde(default)]
        t_f: Option<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    ConstraintLimited {
        #[serde(default = "KinematicBounds::nominal")]
        kinematic_bounds: KinematicBounds,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    TimeOptimal {
        #[serde(default = "default_intervals")]
        n_intervals: usize,
        #[serde(default)]
        endpoint_accel: EndpointAccel,
    },
    /// A `protocol-v1` document written by `plan` or `timeopt`.
    File { path: PathBuf },
    /// Zero-length protocol holding gravity at the start configuration.
    Hold,
}

fn default_samples() -> usize {
    4001
}

fn default_intervals() -> usize {
    100
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec::Sta {
            order: ShapeOrder::Quintic,
            t_f: Some(4.0),
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offset {
    pub d_theta: Angle,
    pub d_r: f64,
}

impl Default for Offset {
    fn default() -> Self {
        Self {
            d_theta: Angle::rad(0.0),
            d_r: 0.0,
        }
    }
}

fn default_distribution() -> NoiseDistribution {
    NoiseDistribution::TruncatedGaussian
}

fn default_sigma_fraction() -> f64 {
    1.0 / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub theta: Angle,
    pub r: f64,
    #[serde(default = "default_distribution")]
    pub distribution: NoiseDistribution,
    #[serde(default = "default_sigma_fraction")]
    pub sigma_fraction: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            theta: Angle::rad(std::f64::consts::PI / 3600.0),
            r: 0.005,
            distribution: default_distribution(),
            sigma_fraction: default_sigma_fraction(),
        }
    }
}

impl MeasurementNoise {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: NoiseKind::Measurement,
            bounds: [self.theta.radians(), self.r],
            distribution: self.distribution,
            sigma_fraction: self.sigma_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputNoise {
    pub tau: f64,
    pub f: f64,
    #[serde(default = "default_distribution")]
    pub distribution: NoiseDistribution,
    #[serde(default = "default_sigma_fraction")]
    pub sigma_fraction: f64,
    /// Longest time a single noise draw is held (s); `null` perturbs the native schedule nodes.
    #[serde(default = "default_noise_spacing")]
    pub spacing: Option<f64>,
}

fn default_noise_spacing() -> Option<f64> {
    Some(1e-3)
}

impl Default for InputNoise {
    fn default() -> Self {
        Self {
            tau: 30.0,
            f: 10.0,
            distribution: default_distribution(),
            sigma_fraction: default_sigma_fraction(),
            spacing: default_noise_spacing(),
        }
    }
}

impl InputNoise {
    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: NoiseKind::Input,
            bounds: [self.tau, self.f],
            distribution: self.distribution,
            sigma_fraction: self.sigma_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub d_theta: Angle,
    pub d_r: f64,
    pub count: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            d_theta: Angle::rad(std::f64::consts::PI / 1800.0),
            d_r: 0.01,
            count: 21,
        }
    }
}

impl Grid {
    pub fn spec(&self) -> GridSpec {
        GridSpec::symmetric(self.d_theta.radians(), self.d_r, self.count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    #[default]
    OpenLoop,
    Pid,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobustnessSpec {
    InitialErrorGrid {
        #[serde(default)]
        controller: Controller,
        #[serde(default)]
        grid: Grid,
    },
    /// Input-noise trials on the open-loop protocol; noise settings come from `input_noise`.
    InputNoise {
        #[serde(default = "default_trials")]
        n_trials: usize,
    },
    /// PID measurement-noise trials; noise settings come from `measurement_noise`.
    MeasurementNoise {
        #[serde(default = "default_trials")]
        n_trials: usize,
    },
}

fn default_trials() -> usize {
    500
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        RobustnessSpec::InitialErrorGrid {
            controller: Controller::OpenLoop,
            grid: Grid::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSpec {
    pub mode: DampingMode,
    pub b1: [f64; 2],
    pub b2: [f64; 2],
    pub counts: [usize; 2],
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            mode: DampingMode::Matched,
            b1: [0.0, 200.0],
            b2: [0.0, 200.0],
            counts: [21, 21],
        }
    }
}

/// Either fixed correction constants or a calibration over a grid of initial errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrectionSpec {
    Fixed(CorrectionConfig),
    Calibrate {
        #[serde(default = "default_calibration_grid")]
        grid: Grid,
        #[serde(default)]
        space: CalibrationSpace,
    },
}

fn default_calibration_grid() -> Grid {
    Grid {
        count: 5,
        ..Grid::default()
    }
}

impl Default for CorrectionSpec {
    fn default() -> Self {
        CorrectionSpec::Calibrate {
            grid: default_calibration_grid(),
            space: CalibrationSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: SystemParams,
    pub transfer: Transfer,
    pub protocol: ProtocolSpec,
    pub bounds: ActuatorBounds,
    pub dt: f64,
    pub seed: u64,
    pub start_offset: Offset,
    pub pid: PidConfig,
    pub correction: CorrectionSpec,
    /// Applied by `pid` and `correct` when present.
    pub measurement_noise: Option<MeasurementNoise>,
    pub input_noise: InputNoise,
    pub robustness: RobustnessSpec,
    pub scan: ScanSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::nominal(),
            transfer: Transfer::default(),
            protocol: ProtocolSpec::default(),
            bounds: ActuatorBounds::nominal(),
            dt: 1e-3,
            seed: 0,
            start_offset: Offset::default(),
            pid: PidConfig::default(),
            correction: CorrectionSpec::default(),
            measurement_noise: None,
            input_noise: InputNoise::default(),
            robustness: RobustnessSpec::default(),
            scan: ScanSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    /// Checks every section before anything is computed or written.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        self.bounds.validate()?;
        self.pid.validate()?;
        self.input_noise.spec().validate()?;
        if let Some(n) = &self.measurement_noise {
            n.spec().validate()?;
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::config(format!("dt must be positive, got {}", self.dt)));
        }
        let t = self.transfer;
        let off = self.start_offset;
        let finite = [t.theta0.value, t.thetaf.value, t.r0, t.rf, off.d_theta.value, off.d_r];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(CliError::config("transfer and offset values must be finite"));
        }
        if !(t.r0 > 0.0 && t.rf > 0.0 && t.r0 + off.d_r > 0.0) {
            return Err(CliError::config("radii must be positive"));
        }
        if let Some(s) = self.input_noise.spacing {
            if !(s > 0.0) {
                return Err(CliError::config("input noise spacing must be positive"));
            }
        }
        match &self.protocol {
            ProtocolSpec::Sta { t_f, samples, .. } => {
                if t_f.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                    return Err(CliError::config("t_f must be positive"));
                }
                if *samples < 100 {
                    return Err(CliError::config("STA protocols need at least 100 samples"));
                }
            }
            ProtocolSpec::ConstraintLimited { kinematic_bounds, .. } => kinematic_bounds.validate()?,
            ProtocolSpec::TimeOptimal { n_intervals, .. } => {
                if *n_intervals < 40 {
                    return Err(CliError::config("time-optimal transcription needs at least 40 intervals"));
                }
            }
            ProtocolSpec::File { .. } | ProtocolSpec::Hold => {}
        }
        match &self.robustness {
            RobustnessSpec::InitialErrorGrid { grid, .. } => grid.spec().validate()?,
            RobustnessSpec::InputNoise { n_trials } | RobustnessSpec::MeasurementNoise { n_trials } => {
                if *n_trials < 100 {
                    return Err(CliError::config("robustness trials need at least 100 runs"));
                }
            }
        }
        if let CorrectionSpec::Calibrate { grid, .. } = &self.correction {
            grid.spec().validate()?;
        }
        if self.scan.counts.iter().any(|&n| n < 5) {
            return Err(CliError::config("damping scan needs at least 5 points per axis"));
        }
        Ok(())
    }

    pub fn endpoints(&self) -> Endpoints {
        self.transfer.endpoints()
    }

    /// Designed start shifted by `start_offset`.
    pub fn start(&self) -> State {
        let s = self.endpoints().start();
        State::at_rest(s.theta + self.start_offset.d_theta.radians(), s.r + self.start_offset.d_r)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            ..SimConfig::with_dt(self.dt)
        }
    }

    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
