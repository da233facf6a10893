use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or state lies outside the model's domain (e.g. `r <= 0`).
    #[error("domain error: {0}")]
    Domain(String),

    /// The radius reached zero or went negative, or the state blew up.
    #[error("trajectory aborted at t = {time:.6} s: {reason}")]
    Aborted { time: f64, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Feasibility of a candidate duration is not monotone over the bisection bracket.
    #[error("feasibility is not monotone over [{lo}, {hi}] s (scan: {scan:?})")]
    NonMonotone {
        lo: f64,
        hi: f64,
        scan: Vec<(f64, bool)>,
    },

    #[error("no solution within tolerances after {iterations} outer iterations (best t_f = {best_tf:.6} s, residual = {residual:.3e})")]
    Convergence {
        iterations: usize,
        best_tf: f64,
        residual: f64,
        /// Closest-to-feasible iterate, when one exists.
        best: Option<Box<crate::timeopt::OcpSolution>>,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
