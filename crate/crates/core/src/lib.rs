//! Fast point-to-point transfers of a dissipative r-theta manipulator.
//!
//! The crate covers the whole pipeline: the equations of motion, boundary-conditioned
//! reference trajectories, open-loop input synthesis by inverse dynamics, an
//! actuator-bounded minimum-time solver, PID and single-shot corrective control, and
//! Monte Carlo robustness harnesses based on the relative final-energy error.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod planners;
pub mod robustness;
pub mod simulate;
pub mod timeopt;
pub mod trajectory;

pub use error::{Error, Result};
