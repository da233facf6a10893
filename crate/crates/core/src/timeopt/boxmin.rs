//! Box-constrained smooth minimization by projected L-BFGS.

use std::collections::VecDeque;

pub(crate) struct Outcome {
    pub pg_norm: f64,
}

#[inline]
fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// Infinity norm of `P(z − g) − z`.
pub(crate) fn projected_gradient_norm(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    z.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (zi, gi))| (project(zi - gi, lo[i], hi[i]) - zi).abs())
        .fold(0.0, f64::max)
}

/// Projected L-BFGS: quasi-Newton steps on the free variables, Armijo search along
/// the projection arc, steepest-descent restarts when the model direction fails.
pub(crate) fn minimize<F>(mut f: F, z: &mut [f64], lo: &[f64], hi: &[f64], max_iter: usize, tol: f64) -> Outcome
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    const MEMORY: usize = 12;
    const GAMMA: f64 = 1e-4;
    let n = z.len();
    for i in 0..n {
        z[i] = project(z[i], lo[i], hi[i]);
    }
    let mut g = vec![0.0; n];
    let mut fz = f(z, Some(&mut g));
    let mut s_mem: VecDeque<Vec<f64>> = VecDeque::with_capacity(MEMORY);
    let mut y_mem: VecDeque<Vec<f64>> = VecDeque::with_capacity(MEMORY);
    let mut free = vec![true; n];
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; MEMORY];
    let mut pg = projected_gradient_norm(z, &g, lo, hi);
    let mut it = 0;
    while it < max_iter && pg > tol && fz.is_finite() {
        it += 1;
        for i in 0..n {
            free[i] = !((z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0) || lo[i] == hi[i]);
            d[i] = if free[i] { g[i] } else { 0.0 };
        }
        let dot = |a: &[f64], b: &[f64], free: &[bool]| -> f64 {
            (0..n).filter(|&i| free[i]).map(|i| a[i] * b[i]).sum()
        };
        let k = s_mem.len();
        for j in (0..k).rev() {
            let sy = dot(&s_mem[j], &y_mem[j], &free);
            if sy <= 0.0 {
                alpha[j] = 0.0;
                continue;
            }
            alpha[j] = dot(&s_mem[j], &d, &free) / sy;
            for i in 0..n {
                if free[i] {
                    d[i] -= alpha[j] * y_mem[j][i];
                }
            }
        }
        if k > 0 {
            let sy = dot(&s_mem[k - 1], &y_mem[k - 1], &free);
            let yy = dot(&y_mem[k - 1], &y_mem[k - 1], &free);
            if sy > 0.0 && yy > 0.0 {
                let gamma = sy / yy;
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for j in 0..k {
            let sy = dot(&s_mem[j], &y_mem[j], &free);
            if sy <= 0.0 {
                continue;
            }
            let beta = dot(&y_mem[j], &d, &free) / sy;
            for i in 0..n {
                if free[i] {
                    d[i] += (alpha[j] - beta) * s_mem[j][i];
                }
            }
        }
        for i in 0..n {
            d[i] = if free[i] { -d[i] } else { 0.0 };
        }
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let dnorm = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(gd < 0.0) || dnorm == 0.0 {
            s_mem.clear();
            y_mem.clear();
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let mut lam = if s_mem.is_empty() {
            let dn = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if dn > 0.0 { (0.1 / dn).min(1.0) } else { 1.0 }
        } else {
            1.0
        };
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = project(z[i] + lam * d[i], lo[i], hi[i]);
            }
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - z[i])).sum();
            let ft = f(&trial, None);
            if ft.is_finite() && decrease < 0.0 && ft <= fz + GAMMA * decrease {
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            if s_mem.is_empty() {
                break;
            }
            s_mem.clear();
            y_mem.clear();
            continue;
        }
        let f_new = f(&trial, Some(&mut g_new));
        let s: Vec<f64> = (0..n).map(|i| trial[i] - z[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * ss {
            if s_mem.len() == MEMORY {
                s_mem.pop_front();
                y_mem.pop_front();
            }
            s_mem.push_back(s);
            y_mem.push_back(y);
        }
        z.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        fz = f_new;
        pg = projected_gradient_norm(z, &g, lo, hi);
    }
    Outcome {
        pg_norm: pg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_quadratic() {
        // min (z0 − 3)² + 10 (z1 + 2)² over [0, 1] × [−1, 1] → (1, −1).
        let f = |z: &[f64], g: Option<&mut [f64]>| {
            if let Some(g) = g {
                g[0] = 2.0 * (z[0] - 3.0);
                g[1] = 20.0 * (z[1] + 2.0);
            }
            (z[0] - 3.0).powi(2) + 10.0 * (z[1] + 2.0).powi(2)
        };
        let mut z = [0.5, 0.0];
        let out = minimize(f, &mut z, &[0.0, -1.0], &[1.0, 1.0], 100, 1e-12);
        assert_eq!(z, [1.0, -1.0]);
        assert_eq!(out.pg_norm, 0.0);
    }

    #[test]
    fn rosenbrock_interior() {
        let f = |z: &[f64], g: Option<&mut [f64]>| {
            let (x, y) = (z[0], z[1]);
            if let Some(g) = g {
                g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
                g[1] = 200.0 * (y - x * x);
            }
            (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
        };
        let mut z = [-1.2, 1.0];
        let out = minimize(f, &mut z, &[-5.0, -5.0], &[5.0, 5.0], 20_000, 1e-9);
        assert!(out.pg_norm <= 1e-9, "{}", out.pg_norm);
        assert!((z[0] - 1.0).abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pinned_variables_stay_fixed() {
        let f = |z: &[f64], g: Option<&mut [f64]>| {
            if let Some(g) = g {
                g[0] = 2.0 * (z[0] + z[1]);
                g[1] = 2.0 * (z[0] + z[1]);
            }
            (z[0] + z[1]).powi(2)
        };
        let mut z = [0.0, 0.25];
        minimize(f, &mut z, &[-1.0, 0.25], &[1.0, 0.25], 100, 1e-12);
        assert_eq!(z[1], 0.25);
        assert!((z[0] + 0.25).abs() < 1e-9);
    }
}
