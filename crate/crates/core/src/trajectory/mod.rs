//! Boundary-conditioned reference trajectories.

mod polynomial;
mod trapezoid;

pub use polynomial::{shape_eval, PolynomialProfile, ShapeOrder};
pub use trapezoid::{synchronize_profiles, trapezoid_min_time, TrapezoidProfile, TrapezoidTrajectory};

use crate::dynamics::KinPoint;
use crate::error::Result;

/// Anything that yields a kinematic point for every `t` in `[0, duration]`.
pub trait Reference: Send + Sync {
    fn duration(&self) -> f64;
    fn kin_at(&self, t: f64) -> Result<KinPoint>;
}

impl<R: Reference + ?Sized> Reference for &R {
    fn duration(&self) -> f64 {
        (**self).duration()
    }

    fn kin_at(&self, t: f64) -> Result<KinPoint> {
        (**self).kin_at(t)
    }
}

/// Holds a fixed configuration; useful as a tracking setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hold {
    pub q: crate::dynamics::Config2,
    pub t_f: f64,
}

impl Reference for Hold {
    fn duration(&self) -> f64 {
        self.t_f
    }

    fn kin_at(&self, _t: f64) -> Result<KinPoint> {
        Ok(KinPoint {
            q: self.q,
            ..Default::default()
        })
    }
}
