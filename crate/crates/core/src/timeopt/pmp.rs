//! A posteriori minimum-principle checks on a transcribed solution.

use serde::{Deserialize, Serialize};

use super::dual::{rhs, rk4_jac};
use super::{OcpSolution, SATURATION_TOL};
use crate::dynamics::SystemParams;

/// Costates and switching functions on the interval nodes of a solution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostateTrace {
    pub times: Vec<f64>,
    /// `[p1, p2, p3, p4]` at each node.
    pub costates: Vec<[f64; 4]>,
    /// `p3 / (m r²)`
    pub alpha_tau: Vec<f64>,
    /// `p4 / m`
    pub alpha_f: Vec<f64>,
    /// `H_c = 1 + pᵀ ẋ` on each node after fitting the costate scale.
    pub hamiltonian: Vec<f64>,
    /// Factor applied to the terminal multipliers so that `H_c ≈ 0` in least squares.
    pub scale: f64,
    /// Fraction of saturated intervals whose bound matches the switching-function sign.
    pub sign_consistency: f64,
    pub saturated_intervals: usize,
    /// Interpolated zero crossings of each switching function.
    pub switch_times_tau: Vec<f64>,
    pub switch_times_f: Vec<f64>,
    /// False when the backward sweep produced non-finite or exploding values.
    pub reliable: bool,
}

impl CostateTrace {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_abs_hamiltonian(&self) -> f64 {
        self.hamiltonian.iter().map(|h| h.abs()).fold(0.0, f64::max)
    }
}

fn zero_crossings(times: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..v.len().saturating_sub(1) {
        let (a, b) = (v[k], v[k + 1]);
        if a == 0.0 {
            out.push(times[k]);
        } else if a * b < 0.0 {
            let w = a / (a - b);
            out.push(times[k] + w * (times[k + 1] - times[k]));
        }
    }
    out
}

/// Sweeps the discrete adjoint of the RK4 transcription backward from the terminal
/// multipliers and evaluates the switching functions.
///
/// The multipliers fix the costate direction; the overall scale is fitted so that the
/// Hamiltonian of the free-time problem vanishes along the path in least squares.
pub fn pmp_diagnostics(p: &SystemParams, sol: &OcpSolution) -> CostateTrace {
    let n = sol.controls.len();
    if sol.t_f == 0.0 || n == 0 {
        return CostateTrace {
            reliable: true,
            sign_consistency: 1.0,
            scale: 0.0,
            ..Default::default()
        };
    }
    let sub = sol.substeps.max(1);
    let h = sol.t_f / (n * sub) as f64;
    let mut costates = vec![[0.0; 4]; n + 1];
    let mut a = sol.terminal_multipliers;
    costates[n] = a;
    let mut reliable = true;
    for k in (0..n).rev() {
        let u = [sol.controls[k].tau, sol.controls[k].f];
        let mut x = sol.states[k].to_array();
        let mut jacs = Vec::with_capacity(sub);
        for _ in 0..sub {
            let j = rk4_jac(p, &x, &u, h);
            x = j.x;
            jacs.push(j);
        }
        for j in jacs.iter().rev() {
            a = std::array::from_fn(|col| (0..4).map(|i| j.jx[i][col] * a[i]).sum());
        }
        if !a.iter().all(|v| v.is_finite() && v.abs() < 1e12) {
            reliable = false;
        }
        costates[k] = a;
    }

    let control_at = |k: usize| {
        let u = sol.controls[k.min(n - 1)];
        [u.tau, u.f]
    };
    let q: Vec<f64> = (0..=n)
        .map(|k| {
            let xdot = rhs(p, &sol.states[k].to_array(), &control_at(k));
            (0..4).map(|i| costates[k][i] * xdot[i]).sum()
        })
        .collect();
    let qq: f64 = q.iter().map(|v| v * v).sum();
    let scale = if qq > 0.0 { -q.iter().sum::<f64>() / qq } else { 0.0 };
    if !scale.is_finite() {
        reliable = false;
    }
    for c in costates.iter_mut() {
        for v in c.iter_mut() {
            *v *= scale;
        }
    }
    let hamiltonian: Vec<f64> = q.iter().map(|v| 1.0 + scale * v).collect();

    let times: Vec<f64> = (0..=n).map(|k| sol.t_f * k as f64 / n as f64).collect();
    let alpha_tau: Vec<f64> = (0..=n)
        .map(|k| {
            let r = sol.states[k].r;
            costates[k][2] / (p.m * r * r)
        })
        .collect();
    let alpha_f: Vec<f64> = costates.iter().map(|c| c[3] / p.m).collect();

    let mut saturated = 0usize;
    let mut consistent = 0usize;
    for k in 0..n {
        let u = sol.controls[k];
        for (val, max, alpha) in [
            (u.tau, sol.bounds.tau_max, &alpha_tau),
            (u.f, sol.bounds.f_max, &alpha_f),
        ] {
            if val.abs() >= max * (1.0 - SATURATION_TOL) {
                saturated += 1;
                let a_mid = 0.5 * (alpha[k] + alpha[k + 1]);
                // Minimizing H puts the control at +max where α < 0 and at −max where α > 0.
                if a_mid * val < 0.0 {
                    consistent += 1;
                }
            }
        }
    }
    let sign_consistency = if saturated == 0 {
        1.0
    } else {
        consistent as f64 / saturated as f64
    };

    CostateTrace {
        switch_times_tau: zero_crossings(&times, &alpha_tau),
        switch_times_f: zero_crossings(&times, &alpha_f),
        times,
        costates,
        alpha_tau,
        alpha_f,
        hamiltonian,
        scale,
        sign_consistency,
        saturated_intervals: saturated,
        reliable,
    }
}
