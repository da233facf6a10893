//! Feedback tracking and single-shot mid-course correction.

mod correction;
mod pid;

pub use correction::{
    calibrate_correction, single_shot_correct, Calibration, CalibrationSpace, CorrectedRun, CorrectionConfig,
    CorrectionMode, CorrectionReport, ERROR_DEADBAND,
};
pub use pid::{pid_track, pid_track_disturbed, AntiWindup, ChannelGains, Feedforward, PidConfig, PidGains};
