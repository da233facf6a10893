//! Equations of motion of the r-theta manipulator with viscous (Rayleigh) damping.
//!
//! ```text
//! m r² θ̈ + 2 m r ṙ θ̇ + B1 θ̇ + m g r cosθ = τ
//! m r̈   −   m r θ̇²   + B2 ṙ + m g sinθ    = f
//! ```
//!
//! The inertia matrix `diag(m r², m)` is diagonal, so accelerations are obtained by
//! direct division and never through a matrix inverse.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Point mass (kg).
    pub m: f64,
    /// Gravitational acceleration (m/s²).
    pub g: f64,
    /// Angular damping (kg·m²/(s·rad)).
    pub b1: f64,
    /// Radial damping (kg/s).
    pub b2: f64,
}

impl SystemParams {
    pub fn new(m: f64, g: f64, b1: f64, b2: f64) -> Result<Self> {
        let p = Self { m, g, b1, b2 };
        p.validate()?;
        Ok(p)
    }

    /// m = 20 kg, g = 9.8 m/s², B1 = 100, B2 = 50.
    pub fn nominal() -> Self {
        Self {
            m: 20.0,
            g: 9.8,
            b1: 100.0,
            b2: 50.0,
        }
    }

    pub fn with_damping(self, b1: f64, b2: f64) -> Self {
        Self { b1, b2, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.m, self.g, self.b1, self.b2].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("system parameters must be finite".into()));
        }
        if self.m <= 0.0 {
            return Err(Error::Config(format!("mass must be positive, got {}", self.m)));
        }
        if self.g < 0.0 || self.b1 < 0.0 || self.b2 < 0.0 {
            return Err(Error::Config(
                "gravity and damping coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Configuration and velocity: `(θ, r, θ̇, ṙ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub theta: f64,
    pub r: f64,
    pub dtheta: f64,
    pub dr: f64,
}

impl State {
    pub const fn new(theta: f64, r: f64, dtheta: f64, dr: f64) -> Self {
        Self {
            theta,
            r,
            dtheta,
            dr,
        }
    }

    pub const fn at_rest(theta: f64, r: f64) -> Self {
        Self::new(theta, r, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.theta, self.r, self.dtheta, self.dr]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn position(&self) -> Config2 {
        Config2 {
            theta: self.theta,
            r: self.r,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// A pair `(θ, r)`; used for positions, rates and accelerations alike.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Config2 {
    pub theta: f64,
    pub r: f64,
}

impl Config2 {
    pub const fn new(theta: f64, r: f64) -> Self {
        Self { theta, r }
    }

    pub const ZERO: Self = Self { theta: 0.0, r: 0.0 };
}

/// Generalized input `Q = (τ, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenInput {
    /// Torque (kg·m²/s²).
    pub tau: f64,
    /// Radial force (N).
    pub f: f64,
}

impl GenInput {
    pub const fn new(tau: f64, f: f64) -> Self {
        Self { tau, f }
    }

    pub const ZERO: Self = Self { tau: 0.0, f: 0.0 };

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.f.is_finite()
    }
}

impl std::ops::Add for GenInput {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.tau + rhs.tau, self.f + rhs.f)
    }
}

/// Position, velocity and acceleration of both coordinates at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinPoint {
    pub q: Config2,
    pub dq: Config2,
    pub ddq: Config2,
}

impl KinPoint {
    pub fn state(&self) -> State {
        State::new(self.q.theta, self.q.r, self.dq.theta, self.dq.r)
    }
}

/// Accelerations `(θ̈, r̈)` produced by input `u` in state `x`.
pub fn forward_accel(p: &SystemParams, x: &State, u: &GenInput) -> Result<Config2> {
    if x.r <= 0.0 || x.r.is_nan() {
        return Err(Error::Domain(format!("radius must be positive, got {}", x.r)));
    }
    let acc = forward_accel_unchecked(p, x, u);
    if !(acc.theta.is_finite() && acc.r.is_finite()) {
        return Err(Error::Domain("non-finite acceleration".into()));
    }
    Ok(acc)
}

/// Same as [`forward_accel`] without the domain checks; used in integrator inner loops.
#[inline]
pub fn forward_accel_unchecked(p: &SystemParams, x: &State, u: &GenInput) -> Config2 {
    let State {
        theta,
        r,
        dtheta,
        dr,
    } = *x;
    let m = p.m;
    let (s, c) = theta.sin_cos();
    let ddtheta =
        (u.tau - 2.0 * m * r * dr * dtheta - p.b1 * dtheta - m * p.g * r * c) / (m * r * r);
    let ddr = (u.f + m * r * dtheta * dtheta - p.b2 * dr - m * p.g * s) / m;
    Config2::new(ddtheta, ddr)
}

/// State derivative `ẋ = (θ̇, ṙ, θ̈, r̈)`.
#[inline]
pub fn state_derivative(p: &SystemParams, x: &State, u: &GenInput) -> [f64; 4] {
    let a = forward_accel_unchecked(p, x, u);
    [x.dtheta, x.dr, a.theta, a.r]
}

/// Input that realizes the kinematic point `k` exactly.
pub fn inverse_dynamics(p: &SystemParams, k: &KinPoint) -> Result<GenInput> {
    if k.q.r <= 0.0 || k.q.r.is_nan() {
        return Err(Error::Domain(format!("radius must be positive, got {}", k.q.r)));
    }
    let m = p.m;
    let (theta, r) = (k.q.theta, k.q.r);
    let (dtheta, dr) = (k.dq.theta, k.dq.r);
    let (s, c) = theta.sin_cos();
    let tau = m * r * r * k.ddq.theta + 2.0 * m * r * dr * dtheta + p.b1 * dtheta + m * p.g * r * c;
    let f = m * k.ddq.r - m * r * dtheta * dtheta + p.b2 * dr + m * p.g * s;
    Ok(GenInput::new(tau, f))
}

/// `E = ½ m r² θ̇² + ½ m ṙ² + m g r sinθ`.
pub fn mechanical_energy(p: &SystemParams, x: &State) -> f64 {
    kinetic_energy(p, x) + p.m * p.g * x.r * x.theta.sin()
}

pub fn kinetic_energy(p: &SystemParams, x: &State) -> f64 {
    0.5 * p.m * (x.r * x.r * x.dtheta * x.dtheta + x.dr * x.dr)
}

/// `dE/dt = −B1 θ̇² − B2 ṙ² + τ θ̇ + f ṙ`.
pub fn power_balance(p: &SystemParams, x: &State, u: &GenInput) -> f64 {
    -p.b1 * x.dtheta * x.dtheta - p.b2 * x.dr * x.dr + u.tau * x.dtheta + u.f * x.dr
}

/// Static input balancing gravity at `q`: `(m g r cosθ, m g sinθ)`.
pub fn gravity_vector(p: &SystemParams, q: Config2) -> Result<GenInput> {
    if q.r <= 0.0 {
        return Err(Error::Domain(format!("radius must be positive, got {}", q.r)));
    }
    let (s, c) = q.theta.sin_cos();
    Ok(GenInput::new(p.m * p.g * q.r * c, p.m * p.g * s))
}

/// Effective stiffness `∂G/∂q` at `q_f`, row-major.
pub fn linearized_stiffness(p: &SystemParams, q_f: Config2) -> Result<[[f64; 2]; 2]> {
    if q_f.r <= 0.0 {
        return Err(Error::Domain(format!("radius must be positive, got {}", q_f.r)));
    }
    let mg = p.m * p.g;
    let (s, c) = q_f.theta.sin_cos();
    Ok([[-mg * q_f.r * s, mg * c], [mg * c, 0.0]])
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn symmetric_eigenvalues(k: &[[f64; 2]; 2]) -> [f64; 2] {
    let mean = 0.5 * (k[0][0] + k[1][1]);
    let half_diff = 0.5 * (k[0][0] - k[1][1]);
    let rad = half_diff.hypot(k[0][1]);
    [mean - rad, mean + rad]
}
