//! Actuator-bounded minimum-time transfer by direct transcription.
//!
//! Decision variables are the final time and one constant `(τ, f)` pair per interval.
//! The terminal rest conditions enter through an augmented Lagrangian whose inner
//! problems are solved by projected L-BFGS, with exact gradients
//! from a discrete adjoint sweep over the RK4 steps.

mod dual;
mod pmp;
mod boxmin;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{gravity_vector, inverse_dynamics, GenInput, State, SystemParams};
use crate::error::{Error, Result};
use crate::planners::{ActuatorBounds, Endpoints, Protocol, ProtocolDocument, ProtocolLabel};
use crate::simulate::{derive_seed, InputSchedule};
use crate::trajectory::{PolynomialProfile, ShapeOrder};

pub use pmp::{pmp_diagnostics, CostateTrace};

/// Relative distance to a bound below which an interval counts as saturated.
pub const SATURATION_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpConfig {
    pub n_intervals: usize,
    pub bounds: ActuatorBounds,
    /// `(rad, m)`
    pub terminal_pos_tol: [f64; 2],
    /// `(rad/s, m/s)`
    pub terminal_vel_tol: [f64; 2],
    pub max_outer_iters: usize,
    pub penalty_growth: f64,
    pub seed: u64,
    /// RK4 steps per control interval.
    pub substeps: usize,
    pub max_inner_iters: usize,
    /// Randomized bang-bang starts in addition to the fixed ones.
    pub random_starts: usize,
    pub endpoint_accel: EndpointAccel,
}

/// Treatment of the endpoint accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointAccel {
    /// First and last intervals apply the gravity-balancing input, so the
    /// acceleration vanishes at both rest endpoints.
    #[default]
    Hold,
    /// Only position and velocity are prescribed at the ends.
    Free,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            n_intervals: 100,
            bounds: ActuatorBounds::nominal(),
            terminal_pos_tol: [1e-4, 1e-4],
            terminal_vel_tol: [1e-4, 1e-4],
            max_outer_iters: 30,
            penalty_growth: 10.0,
            seed: 0,
            substeps: 2,
            max_inner_iters: 1500,
            random_starts: 4,
            endpoint_accel: EndpointAccel::Hold,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.n_intervals < 40 {
            return Err(Error::Config(format!("n_intervals must be at least 40, got {}", self.n_intervals)));
        }
        let tols = [self.terminal_pos_tol, self.terminal_vel_tol].concat();
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("terminal tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::Config("penalty growth must exceed 1".into()));
        }
        if self.substeps == 0 || self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        Ok(())
    }

    fn tolerances(&self) -> [f64; 4] {
        [
            self.terminal_pos_tol[0],
            self.terminal_pos_tol[1],
            self.terminal_vel_tol[0],
            self.terminal_vel_tol[1],
        ]
    }
}

/// Fraction of intervals at a bound, per channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Saturation {
    pub tau: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub t_f: f64,
    /// One constant input per interval.
    pub controls: Vec<GenInput>,
    /// States at the `n_intervals + 1` interval nodes.
    pub states: Vec<State>,
    pub kkt_residual: f64,
    pub saturation_fraction: Saturation,
    /// Lagrange multipliers of the terminal constraints `x(t_f) − x_f = 0`.
    pub terminal_multipliers: [f64; 4],
    /// `t_f` after each outer iteration of the selected start.
    pub t_f_history: Vec<f64>,
    pub terminal_error: [f64; 4],
    pub params: SystemParams,
    pub bounds: ActuatorBounds,
    pub endpoints: Endpoints,
    pub substeps: usize,
}

impl OcpSolution {
    pub fn n_intervals(&self) -> usize {
        self.controls.len()
    }

    pub fn interval(&self) -> f64 {
        self.t_f / self.controls.len() as f64
    }

    /// `Σ |τ_{k+1} − τ_k|`
    pub fn tau_total_variation(&self) -> f64 {
        self.controls.windows(2).map(|w| (w[1].tau - w[0].tau).abs()).sum()
    }

    pub fn schedule(&self) -> Result<InputSchedule> {
        if self.t_f == 0.0 {
            return Ok(InputSchedule::instant(self.controls[0]));
        }
        InputSchedule::piecewise_constant(self.t_f, &self.controls)
    }

    pub fn to_protocol(&self) -> Result<Protocol> {
        Ok(Protocol {
            label: ProtocolLabel::TimeOptimal,
            schedule: self.schedule()?,
            reference: None,
            t_f: self.t_f,
            params: self.params,
            endpoints: self.endpoints,
            bounds: Some(self.bounds),
            kinematic_bounds: None,
        })
    }

    /// Protocol document with a `{kkt_residual, saturation_fraction, t_f_history}` block.
    pub fn to_document(&self) -> Result<ProtocolDocument> {
        let mut doc = self.to_protocol()?.to_document();
        doc.diagnostics = Some(serde_json::json!({
            "kkt_residual": self.kkt_residual,
            "saturation_fraction": self.saturation_fraction,
            "t_f_history": self.t_f_history,
            "terminal_error": self.terminal_error,
        }));
        Ok(doc)
    }
}

/// The transcribed problem with scaled controls `v = u / u_max ∈ [−1, 1]²`.
struct Transcription<'a> {
    p: &'a SystemParams,
    x0: [f64; 4],
    xf: [f64; 4],
    n: usize,
    sub: usize,
    umax: [f64; 2],
}

impl Transcription<'_> {
    fn dim(&self) -> usize {
        2 * self.n + 1
    }

    fn control(&self, z: &[f64], k: usize) -> [f64; 2] {
        [z[2 * k] * self.umax[0], z[2 * k + 1] * self.umax[1]]
    }

    fn step(&self, t_f: f64) -> f64 {
        t_f / (self.n * self.sub) as f64
    }

    fn terminal(&self, z: &[f64]) -> [f64; 4] {
        let h = self.step(z[2 * self.n]);
        let mut x = self.x0;
        for k in 0..self.n {
            let u = self.control(z, k);
            for _ in 0..self.sub {
                x = dual::rk4(self.p, &x, &u, h);
            }
        }
        x
    }

    fn nodes(&self, z: &[f64]) -> Vec<[f64; 4]> {
        let h = self.step(z[2 * self.n]);
        let mut x = self.x0;
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(x);
        for k in 0..self.n {
            let u = self.control(z, k);
            for _ in 0..self.sub {
                x = dual::rk4(self.p, &x, &u, h);
            }
            out.push(x);
        }
        out
    }

    fn residual(&self, z: &[f64]) -> [f64; 4] {
        let x = self.terminal(z);
        std::array::from_fn(|i| x[i] - self.xf[i])
    }

    /// `t_f + λᵀc + ½ μ |c|²`, with the gradient when requested.
    fn lagrangian(&self, z: &[f64], lam: &[f64; 4], mu: f64, grad: Option<&mut [f64]>) -> f64 {
        let t_f = z[2 * self.n];
        let Some(g) = grad else {
            let x = self.terminal(z);
            if !x.iter().all(|v| v.is_finite()) || x[1] <= 0.0 {
                return f64::INFINITY;
            }
            return (0..4).fold(t_f, |acc, i| {
                let c = x[i] - self.xf[i];
                acc + lam[i] * c + 0.5 * mu * c * c
            });
        };
        let h = self.step(t_f);
        let mut jacs = Vec::with_capacity(self.n * self.sub);
        let mut x = self.x0;
        for k in 0..self.n {
            let u = self.control(z, k);
            for _ in 0..self.sub {
                let j = dual::rk4_jac(self.p, &x, &u, h);
                x = j.x;
                jacs.push(j);
            }
        }
        if !x.iter().all(|v| v.is_finite()) || x[1] <= 0.0 {
            g.fill(0.0);
            return f64::INFINITY;
        }
        let mut value = t_f;
        let mut a = [0.0; 4];
        for i in 0..4 {
            let c = x[i] - self.xf[i];
            value += lam[i] * c + 0.5 * mu * c * c;
            a[i] = lam[i] + mu * c;
        }
        g.fill(0.0);
        let dh_dt = 1.0 / (self.n * self.sub) as f64;
        let mut g_t = 1.0;
        for (idx, j) in jacs.iter().enumerate().rev() {
            let k = idx / self.sub;
            for c in 0..2 {
                let s: f64 = (0..4).map(|i| j.ju[i][c] * a[i]).sum();
                g[2 * k + c] += s * self.umax[c];
            }
            g_t += dh_dt * (0..4).map(|i| j.jh[i] * a[i]).sum::<f64>();
            a = std::array::from_fn(|col| (0..4).map(|i| j.jx[i][col] * a[i]).sum());
        }
        g[2 * self.n] = g_t;
        value
    }
}

/// Result of one start of the augmented-Lagrangian loop.
struct Branch {
    z: Vec<f64>,
    lam: [f64; 4],
    kkt: f64,
    history: Vec<f64>,
    feasible: bool,
    iterations: usize,
    violation: f64,
}

fn scaled_violation(c: &[f64; 4], tol: &[f64; 4]) -> f64 {
    (0..4).map(|i| c[i].abs() / tol[i]).fold(0.0, f64::max)
}

fn run_branch(tr: &Transcription, cfg: &OcpConfig, mut z: Vec<f64>, t_bounds: (f64, f64), fixed: &[(usize, f64)]) -> Branch {
    let dim = tr.dim();
    let mut lo = vec![-1.0; dim];
    let mut hi = vec![1.0; dim];
    lo[dim - 1] = t_bounds.0;
    hi[dim - 1] = t_bounds.1;
    for &(i, v) in fixed {
        lo[i] = v;
        hi[i] = v;
    }
    let tol = cfg.tolerances();
    let mut lam = [0.0; 4];
    let mut mu = 10.0;
    let mut history = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut inner_tol = 1e-2;
    let mut kkt = f64::INFINITY;
    let mut feasible = false;
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    for outer in 0..cfg.max_outer_iters {
        iterations = outer + 1;
        let out = boxmin::minimize(
            |zz, g| tr.lagrangian(zz, &lam, mu, g),
            &mut z,
            &lo,
            &hi,
            cfg.max_inner_iters,
            inner_tol,
        );
        let c = tr.residual(&z);
        history.push(z[dim - 1]);
        violation = scaled_violation(&c, &tol);
        for i in 0..4 {
            lam[i] += mu * c[i];
        }
        // Stationarity of t_f + λᵀc with the updated multipliers.
        let mut g = vec![0.0; dim];
        tr.lagrangian(&z, &lam, 0.0, Some(&mut g));
        kkt = boxmin::projected_gradient_norm(&z, &g, &lo, &hi);
        feasible = violation <= 1.0;
        let settled = history.len() >= 2 && {
            let (a, b) = (history[history.len() - 2], history[history.len() - 1]);
            (a - b).abs() <= 1e-7 * b
        };
        if feasible && (settled || (kkt < 1e-6 && out.pg_norm < 1e-6)) {
            break;
        }
        if violation > 0.25 * prev_violation {
            mu = (mu * cfg.penalty_growth).min(1e9);
        }
        prev_violation = violation;
        inner_tol = (inner_tol * 0.3).max(1e-6);
    }
    Branch {
        z,
        lam,
        kkt,
        history,
        feasible,
        iterations,
        violation,
    }
}

fn at_rest(x: &State) -> bool {
    x.dtheta == 0.0 && x.dr == 0.0
}

/// Initial guesses: compressed seventh-order STA inputs, then bang-bang patterns.
fn initial_guesses(p: &SystemParams, x0: &State, xf: &State, cfg: &OcpConfig) -> Result<Vec<Vec<f64>>> {
    let n = cfg.n_intervals;
    let b = cfg.bounds;
    let profile = PolynomialProfile::new(ShapeOrder::Seventh, x0.position(), xf.position(), 1.0)?;
    let dist = {
        let d = profile.displacement();
        // Rough duration scale: time to cover each axis at full acceleration from the force bound.
        let a_r = b.f_max / p.m;
        let a_th = b.tau_max / (p.m * x0.r.max(xf.r).powi(2));
        (2.0 * (d.r.abs() / a_r).sqrt()).max(2.0 * (d.theta.abs() / a_th).sqrt())
    };
    let mut guesses = Vec::new();
    for scale in [1.6, 1.25] {
        let t_f = (scale * dist).max(1e-2);
        let prof = profile.with_duration(t_f)?;
        let mut z = vec![0.0; 2 * n + 1];
        for k in 0..n {
            let t = (k as f64 + 0.5) * t_f / n as f64;
            let u = b.clip(inverse_dynamics(p, &prof.eval(t)?)?);
            z[2 * k] = u.tau / b.tau_max;
            z[2 * k + 1] = u.f / b.f_max;
        }
        z[2 * n] = t_f;
        guesses.push(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7469_6d65));
    let sign = |v: f64| if v >= 0.0 { 1.0 } else { -1.0 };
    let d = profile.displacement();
    let (s_th, s_r) = (sign(d.theta), sign(d.r));
    let mut switches = vec![(0.5, 0.5)];
    for _ in 0..cfg.random_starts {
        switches.push((rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)));
    }
    for (a, c) in switches {
        let mut z = vec![0.0; 2 * n + 1];
        for k in 0..n {
            let s = (k as f64 + 0.5) / n as f64;
            z[2 * k] = if s < a { s_th } else { -s_th };
            z[2 * k + 1] = if s < c { s_r } else { -s_r };
        }
        z[2 * n] = 1.25 * dist;
        guesses.push(z);
    }
    Ok(guesses)
}

/// Minimum-time rest-to-rest transfer from `x0` to `xf` under box input bounds.
pub fn solve_time_optimal(p: &SystemParams, x0: &State, xf: &State, cfg: &OcpConfig) -> Result<OcpSolution> {
    p.validate()?;
    cfg.validate()?;
    if !(at_rest(x0) && at_rest(xf)) {
        return Err(Error::Config("time-optimal transfer requires rest endpoints".into()));
    }
    for (name, x) in [("start", x0), ("goal", xf)] {
        let g = gravity_vector(p, x.position())?;
        if !cfg.bounds.contains(&g) {
            return Err(Error::Infeasible(format!(
                "holding the {name} against gravity needs (τ, f) = ({:.3}, {:.3})",
                g.tau, g.f
            )));
        }
    }
    let endpoints = Endpoints {
        q0: x0.position(),
        qf: xf.position(),
    };
    let n = cfg.n_intervals;
    let tol = cfg.tolerances();
    let gap: [f64; 4] = std::array::from_fn(|i| xf.to_array()[i] - x0.to_array()[i]);
    if scaled_violation(&gap, &tol) <= 1.0 {
        let hold = gravity_vector(p, x0.position())?;
        return Ok(OcpSolution {
            t_f: 0.0,
            controls: vec![hold; n],
            states: vec![*x0; n + 1],
            kkt_residual: 0.0,
            saturation_fraction: Saturation::default(),
            terminal_multipliers: [0.0; 4],
            t_f_history: vec![0.0],
            terminal_error: gap,
            params: *p,
            bounds: cfg.bounds,
            endpoints,
            substeps: cfg.substeps,
        });
    }
    let tr = Transcription {
        p,
        x0: x0.to_array(),
        xf: xf.to_array(),
        n,
        sub: cfg.substeps,
        umax: [cfg.bounds.tau_max, cfg.bounds.f_max],
    };
    let guesses = initial_guesses(p, x0, xf, cfg)?;
    let t_hi = 4.0 * guesses.iter().map(|z| z[2 * n]).fold(0.0, f64::max);
    let t_lo = 1e-3 * t_hi;
    let fixed = match cfg.endpoint_accel {
        EndpointAccel::Free => Vec::new(),
        EndpointAccel::Hold => {
            let g0 = gravity_vector(p, x0.position())?;
            let gf = gravity_vector(p, xf.position())?;
            let (tm, fm) = (cfg.bounds.tau_max, cfg.bounds.f_max);
            vec![
                (0, g0.tau / tm),
                (1, g0.f / fm),
                (2 * n - 2, gf.tau / tm),
                (2 * n - 1, gf.f / fm),
            ]
        }
    };
    let branches: Vec<Branch> = guesses
        .into_par_iter()
        .map(|z| run_branch(&tr, cfg, z, (t_lo, t_hi), &fixed))
        .collect();
    let build = |b: &Branch| {
        let t_f = b.z[2 * n];
        let controls: Vec<GenInput> = (0..n)
            .map(|k| {
                let u = tr.control(&b.z, k);
                cfg.bounds.clip(GenInput::new(u[0], u[1]))
            })
            .collect();
        let states = tr.nodes(&b.z).into_iter().map(State::from_array).collect();
        let saturated = |sel: fn(&GenInput) -> f64, max: f64| {
            controls.iter().filter(|u| sel(u).abs() >= max * (1.0 - SATURATION_TOL)).count() as f64 / n as f64
        };
        OcpSolution {
            t_f,
            saturation_fraction: Saturation {
                tau: saturated(|u| u.tau, cfg.bounds.tau_max),
                f: saturated(|u| u.f, cfg.bounds.f_max),
            },
            controls,
            states,
            kkt_residual: b.kkt,
            terminal_multipliers: b.lam,
            t_f_history: b.history.clone(),
            terminal_error: tr.residual(&b.z),
            params: *p,
            bounds: cfg.bounds,
            endpoints,
            substeps: cfg.substeps,
        }
    };
    let feasible: Vec<OcpSolution> = branches.iter().filter(|b| b.feasible).map(build).collect();
    let Some(best_tf) = feasible.iter().map(|s| s.t_f).min_by(f64::total_cmp) else {
        let best = branches
            .iter()
            .min_by(|a, b| a.violation.total_cmp(&b.violation))
            .expect("at least one start");
        return Err(Error::Convergence {
            iterations: best.iterations,
            best_tf: best.z[2 * n],
            residual: best.violation,
            best: Some(Box::new(build(best))),
        });
    };
    Ok(feasible
        .into_iter()
        .filter(|s| s.t_f <= best_tf * 1.01)
        .min_by(|a, b| a.tau_total_variation().total_cmp(&b.tau_total_variation()))
        .expect("best start is within its own window"))
}

/// Convenience wrapper for the nominal transfer `(0°, 1 m) → (45°, 4 m)`.
pub fn solve_nominal(p: &SystemParams, cfg: &OcpConfig) -> Result<OcpSolution> {
    let e = Endpoints::nominal();
    solve_time_optimal(p, &e.start(), &e.goal(), cfg)
}
