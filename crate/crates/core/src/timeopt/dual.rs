//! Forward-mode dual numbers for the Jacobians of one RK4 step.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::dynamics::SystemParams;

pub(crate) trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn sin_cos(self) -> (Self, Self);
    fn scale(self, k: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Value plus `N` tangent components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..N {
            self.d[i] += o.d[i];
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for i in 0..N {
            self.d[i] -= o.d[i];
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.v.sin_cos();
        let mut ds = [0.0; N];
        let mut dc = [0.0; N];
        for i in 0..N {
            ds[i] = c * self.d[i];
            dc[i] = -s * self.d[i];
        }
        (Self { v: s, d: ds }, Self { v: c, d: dc })
    }
    #[inline]
    fn scale(mut self, k: f64) -> Self {
        self.v *= k;
        for i in 0..N {
            self.d[i] *= k;
        }
        self
    }
}

#[inline]
pub(crate) fn rhs<T: Real>(p: &SystemParams, x: &[T; 4], u: &[T; 2]) -> [T; 4] {
    let [theta, r, dtheta, dr] = *x;
    let m = p.m;
    let (s, c) = theta.sin_cos();
    let mr = r.scale(m);
    let ddtheta = (u[0] - (mr * dr * dtheta).scale(2.0) - dtheta.scale(p.b1) - (mr * c).scale(p.g))
        / (mr * r);
    let ddr = (u[1] + mr * dtheta * dtheta - dr.scale(p.b2) - s.scale(m * p.g)).scale(1.0 / m);
    [dtheta, dr, ddtheta, ddr]
}

#[inline]
fn axpy<T: Real>(x: &[T; 4], k: &[T; 4], h: T) -> [T; 4] {
    [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
}

/// One classical RK4 step with constant input.
#[inline]
pub(crate) fn rk4<T: Real>(p: &SystemParams, x: &[T; 4], u: &[T; 2], h: T) -> [T; 4] {
    let half = h.scale(0.5);
    let k1 = rhs(p, x, u);
    let k2 = rhs(p, &axpy(x, &k1, half), u);
    let k3 = rhs(p, &axpy(x, &k2, half), u);
    let k4 = rhs(p, &axpy(x, &k3, h), u);
    let sixth = h.scale(1.0 / 6.0);
    let mut out = *x;
    for i in 0..4 {
        out[i] = x[i] + sixth * (k1[i] + (k2[i] + k3[i]).scale(2.0) + k4[i]);
    }
    out
}

/// Step result with `∂x⁺/∂x`, `∂x⁺/∂u` and `∂x⁺/∂h`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepJac {
    pub x: [f64; 4],
    pub jx: [[f64; 4]; 4],
    pub ju: [[f64; 2]; 4],
    pub jh: [f64; 4],
}

pub(crate) fn rk4_jac(p: &SystemParams, x: &[f64; 4], u: &[f64; 2], h: f64) -> StepJac {
    let xd: [Dual<7>; 4] = std::array::from_fn(|i| Dual::var(x[i], i));
    let ud = [Dual::var(u[0], 4), Dual::var(u[1], 5)];
    let hd = Dual::var(h, 6);
    let y = rk4(p, &xd, &ud, hd);
    let mut out = StepJac {
        x: [0.0; 4],
        jx: [[0.0; 4]; 4],
        ju: [[0.0; 2]; 4],
        jh: [0.0; 4],
    };
    for i in 0..4 {
        out.x[i] = y[i].v;
        out.jx[i].copy_from_slice(&y[i].d[..4]);
        out.ju[i].copy_from_slice(&y[i].d[4..6]);
        out.jh[i] = y[i].d[6];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{state_derivative, GenInput, State};

    #[test]
    fn rhs_matches_dynamics() {
        let p = SystemParams::nominal();
        let x = [0.3, 2.1, -0.4, 0.7];
        let u = [310.0, -42.0];
        let a = rhs(&p, &x, &u);
        let b = state_derivative(&p, &State::from_array(x), &GenInput::new(u[0], u[1]));
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-12 * (1.0 + b[i].abs()));
        }
    }

    #[test]
    fn step_jacobian_matches_central_differences() {
        let p = SystemParams::nominal();
        let x = [0.3, 2.1, -0.4, 0.7];
        let u = [310.0, -42.0];
        let h = 0.02;
        let j = rk4_jac(&p, &x, &u, h);
        let eps = 1e-6;
        for k in 0..7 {
            let bump = |s: f64| {
                let (mut xx, mut uu, mut hh) = (x, u, h);
                match k {
                    0..=3 => xx[k] += s * eps,
                    4 | 5 => uu[k - 4] += s * eps * 100.0,
                    _ => hh += s * eps * 0.01,
                }
                rk4(&p, &xx, &uu, hh)
            };
            let (a, b) = (bump(1.0), bump(-1.0));
            let scale = match k {
                0..=3 => eps,
                4 | 5 => eps * 100.0,
                _ => eps * 0.01,
            };
            for i in 0..4 {
                let fd = (a[i] - b[i]) / (2.0 * scale);
                let ad = match k {
                    0..=3 => j.jx[i][k],
                    4 | 5 => j.ju[i][k - 4],
                    _ => j.jh[i],
                };
                assert!((fd - ad).abs() < 1e-6 * (1.0 + ad.abs()), "i={i} k={k} fd={fd} ad={ad}");
            }
        }
    }
}
