//! Bang-off-bang (trapezoidal velocity) profiles.
//!
//! All algebra is done on `|d|`; the sign of the displacement is applied when the
//! profile is evaluated.

use serde::{Deserialize, Serialize};

use super::Reference;
use crate::dynamics::{Config2, KinPoint};
use crate::error::{Error, Result};

/// Single-axis accelerate / coast / decelerate profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidProfile {
    /// Signed displacement.
    pub d: f64,
    /// Acceleration magnitude used in the ramp phases.
    pub a: f64,
    /// Coasting (peak) speed actually reached.
    pub v_coast: f64,
    pub t_acc: f64,
    pub t_coast: f64,
    pub t_dec: f64,
}

impl TrapezoidProfile {
    pub const fn zero() -> Self {
        Self {
            d: 0.0,
            a: 0.0,
            v_coast: 0.0,
            t_acc: 0.0,
            t_coast: 0.0,
            t_dec: 0.0,
        }
    }

    pub fn total_time(&self) -> f64 {
        self.t_acc + self.t_coast + self.t_dec
    }

    /// Displacement covered by the three phases, from the phase algebra (no quadrature).
    pub fn covered_distance(&self) -> f64 {
        let ramps = 0.5 * self.a * self.t_acc * self.t_acc + 0.5 * self.a * self.t_dec * self.t_dec;
        self.d.signum() * (ramps + self.v_coast * self.t_coast)
    }

    /// `(offset, velocity, acceleration)` at time `t` after the profile start; held at
    /// the end point for `t` past the total duration.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        if self.d == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let sign = self.d.signum();
        let dist = self.d.abs();
        let t1 = self.t_acc;
        let t2 = t1 + self.t_coast;
        let t3 = t2 + self.t_dec;
        let (x, v, a) = if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < t1 {
            (0.5 * self.a * t * t, self.a * t, self.a)
        } else if t < t2 {
            let x1 = 0.5 * self.a * t1 * t1;
            (x1 + self.v_coast * (t - t1), self.v_coast, 0.0)
        } else if t < t3 {
            // Measured backwards from the end, so the final position is exact.
            let rem = t3 - t;
            (dist - 0.5 * self.a * rem * rem, self.a * rem, -self.a)
        } else {
            (dist, 0.0, 0.0)
        };
        (sign * x, sign * v, sign * a)
    }

    /// Same displacement and acceleration, coast speed lowered so the profile lasts
    /// exactly `target` seconds.
    pub fn stretch_to(&self, target: f64) -> Result<Self> {
        let own = self.total_time();
        if !target.is_finite() {
            return Err(Error::Infeasible(format!("target duration {target} is not finite")));
        }
        if target < own - 1e-12 {
            return Err(Error::Infeasible(format!(
                "target duration {target} s is shorter than the profile's own {own} s"
            )));
        }
        if self.d == 0.0 || target <= own {
            return Ok(*self);
        }
        let dist = self.d.abs();
        let a = self.a;
        // T(v) = v/a + |d|/v; the smaller root keeps a non-negative coast.
        let disc = target * target - 4.0 * dist / a;
        if disc < 0.0 {
            return Err(Error::Infeasible("no admissible coasting speed".into()));
        }
        let v = 2.0 * dist / (target + disc.sqrt());
        let t_acc = v / a;
        let t_coast = (target - 2.0 * t_acc).max(0.0);
        Ok(Self {
            d: self.d,
            a,
            v_coast: v,
            t_acc,
            t_coast,
            t_dec: t_acc,
        })
    }
}

/// Minimum-duration bang-off-bang profile for displacement `d` under `|v| ≤ v_max`, `|a| ≤ a_max`.
pub fn trapezoid_min_time(d: f64, v_max: f64, a_max: f64) -> Result<TrapezoidProfile> {
    if !(v_max > 0.0 && a_max > 0.0) {
        return Err(Error::Domain("velocity and acceleration bounds must be positive".into()));
    }
    if !d.is_finite() {
        return Err(Error::Domain(format!("displacement {d} is not finite")));
    }
    if d == 0.0 {
        return Ok(TrapezoidProfile {
            a: a_max,
            ..TrapezoidProfile::zero()
        });
    }
    let dist = d.abs();
    if dist >= v_max * v_max / a_max {
        let t_acc = v_max / a_max;
        Ok(TrapezoidProfile {
            d,
            a: a_max,
            v_coast: v_max,
            t_acc,
            t_coast: (dist - v_max * v_max / a_max) / v_max,
            t_dec: t_acc,
        })
    } else {
        let v_peak = (dist * a_max).sqrt();
        let t_acc = v_peak / a_max;
        Ok(TrapezoidProfile {
            d,
            a: a_max,
            v_coast: v_peak,
            t_acc,
            t_coast: 0.0,
            t_dec: t_acc,
        })
    }
}

/// Stretch `fast` so that it arrives together with `slow`.
pub fn synchronize_profiles(
    slow: &TrapezoidProfile,
    fast: &TrapezoidProfile,
) -> Result<TrapezoidProfile> {
    fast.stretch_to(slow.total_time())
}

/// Two synchronized single-axis trapezoids starting at `q0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidTrajectory {
    pub q0: Config2,
    pub theta: TrapezoidProfile,
    pub r: TrapezoidProfile,
}

impl TrapezoidTrajectory {
    pub fn eval(&self, t: f64) -> Result<KinPoint> {
        let total = self.duration();
        let slack = 1e-12 * total.max(1.0);
        if !(t >= -slack && t <= total + slack) {
            return Err(Error::Domain(format!("time {t} outside [0, {total}]")));
        }
        let (x_th, v_th, a_th) = self.theta.eval(t);
        let (x_r, v_r, a_r) = self.r.eval(t);
        Ok(KinPoint {
            q: Config2::new(self.q0.theta + x_th, self.q0.r + x_r),
            dq: Config2::new(v_th, v_r),
            ddq: Config2::new(a_th, a_r),
        })
    }
}

impl Reference for TrapezoidTrajectory {
    fn duration(&self) -> f64 {
        self.theta.total_time().max(self.r.total_time())
    }

    fn kin_at(&self, t: f64) -> Result<KinPoint> {
        self.eval(t)
    }
}
