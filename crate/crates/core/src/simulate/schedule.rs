use serde::{Deserialize, Serialize};

use crate::dynamics::GenInput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMode {
    PiecewiseLinear,
    /// Value `k` holds on `[t_k, t_{k+1})`; the last value holds at `t_end`.
    PiecewiseConstantLeft,
}

/// Time-parameterized generalized input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputSchedule {
    times: Vec<f64>,
    tau: Vec<f64>,
    f: Vec<f64>,
    mode: InterpMode,
}

impl InputSchedule {
    pub fn new(times: Vec<f64>, tau: Vec<f64>, f: Vec<f64>, mode: InterpMode) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Config("schedule needs at least 2 samples".into()));
        }
        let s = Self {
            times,
            tau,
            f,
            mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        let instant = n == 1 && self.times[0] == 0.0 && self.tau.len() == 1 && self.f.len() == 1;
        if (n < 2 && !instant) || self.tau.len() != n || self.f.len() != n {
            return Err(Error::Config(format!(
                "schedule needs equal-length arrays of at least 2 samples (times {}, tau {}, f {})",
                n,
                self.tau.len(),
                self.f.len()
            )));
        }
        if self.times[0] != 0.0 {
            return Err(Error::Config("schedule must start at t = 0".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("schedule times must be strictly increasing".into()));
        }
        let all_finite = self
            .times
            .iter()
            .chain(&self.tau)
            .chain(&self.f)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Config("schedule contains non-finite values".into()));
        }
        Ok(())
    }

    /// Single-node schedule of a zero-duration protocol.
    pub fn instant(u: GenInput) -> Self {
        Self {
            times: vec![0.0],
            tau: vec![u.tau],
            f: vec![u.f],
            mode: InterpMode::PiecewiseConstantLeft,
        }
    }

    /// Uniform grid of `n` samples over `[0, t_end]` filled by `input`.
    pub fn from_fn(
        t_end: f64,
        n: usize,
        mode: InterpMode,
        mut input: impl FnMut(f64) -> Result<GenInput>,
    ) -> Result<Self> {
        if n < 2 || !(t_end > 0.0) {
            return Err(Error::Config("uniform schedule needs n >= 2 and t_end > 0".into()));
        }
        let mut times = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        for k in 0..n {
            let t = if k + 1 == n {
                t_end
            } else {
                t_end * k as f64 / (n - 1) as f64
            };
            let u = input(t)?;
            times.push(t);
            tau.push(u.tau);
            f.push(u.f);
        }
        Self::new(times, tau, f, mode)
    }

    /// Piecewise-constant schedule from per-interval controls on a uniform grid.
    pub fn piecewise_constant(t_end: f64, controls: &[GenInput]) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Config("no controls".into()));
        }
        let n = controls.len();
        let mut times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / n as f64).collect();
        times.push(t_end);
        let mut tau: Vec<f64> = controls.iter().map(|u| u.tau).collect();
        let mut f: Vec<f64> = controls.iter().map(|u| u.f).collect();
        tau.push(controls[n - 1].tau);
        f.push(controls[n - 1].f);
        Self::new(times, tau, f, InterpMode::PiecewiseConstantLeft)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn tau_values(&self) -> &[f64] {
        &self.tau
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f
    }

    pub fn mode(&self) -> InterpMode {
        self.mode
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("validated schedule is non-empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node(&self, k: usize) -> GenInput {
        GenInput::new(self.tau[k], self.f[k])
    }

    /// Input at time `t`; clamped to the end values outside `[0, t_end]`.
    pub fn eval(&self, t: f64) -> GenInput {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.node(0);
        }
        if t >= self.times[n - 1] {
            return self.node(n - 1);
        }
        // First index with times[idx] > t, so times[idx - 1] <= t < times[idx].
        let idx = self.times.partition_point(|&x| x <= t);
        let k = idx - 1;
        match self.mode {
            InterpMode::PiecewiseConstantLeft => self.node(k),
            InterpMode::PiecewiseLinear => {
                let (t0, t1) = (self.times[k], self.times[k + 1]);
                if t == t0 {
                    return self.node(k);
                }
                let w = (t - t0) / (t1 - t0);
                GenInput::new(
                    self.tau[k] + w * (self.tau[k + 1] - self.tau[k]),
                    self.f[k] + w * (self.f[k + 1] - self.f[k]),
                )
            }
        }
    }

    /// Left limit at `t`: at a knot of a piecewise-constant schedule, the value of the interval ending there.
    pub fn eval_left(&self, t: f64) -> GenInput {
        if self.mode == InterpMode::PiecewiseConstantLeft && t > self.times[0] && t <= self.times[self.times.len() - 1] {
            let k = self.times.partition_point(|&x| x < t) - 1;
            return self.node(k);
        }
        self.eval(t)
    }

    /// Same grid and mode, new values.
    pub fn with_values(&self, tau: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        Self::new(self.times.clone(), tau, f, self.mode)
    }

    /// The same input on a grid with node spacing at most `max_spacing`: each interval is
    /// split evenly and the new nodes take the schedule's own values.
    pub fn refined(&self, max_spacing: f64) -> Result<Self> {
        if !(max_spacing > 0.0 && max_spacing.is_finite()) {
            return Err(Error::Config(format!("node spacing must be positive, got {max_spacing}")));
        }
        if self.times.len() < 2 {
            return Ok(self.clone());
        }
        let mut times = vec![0.0];
        for w in self.times.windows(2) {
            let m = ((w[1] - w[0]) / max_spacing - 1e-9).ceil().max(1.0) as usize;
            for j in 1..m {
                times.push(w[0] + (w[1] - w[0]) * j as f64 / m as f64);
            }
            times.push(w[1]);
        }
        let (tau, f) = times
            .iter()
            .map(|&t| {
                let u = self.eval(t);
                (u.tau, u.f)
            })
            .unzip();
        Self::new(times, tau, f, self.mode)
    }

    /// Peak `(|τ|, |f|)` over the schedule nodes.
    pub fn peak_abs(&self) -> (f64, f64) {
        let pt = self.tau.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let pf = self.f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (pt, pf)
    }
}
