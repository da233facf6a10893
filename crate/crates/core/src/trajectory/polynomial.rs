use serde::{Deserialize, Serialize};

use super::Reference;
use crate::dynamics::{Config2, KinPoint};
use crate::error::{Error, Result};

/// Which endpoint-stationary shape function to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeOrder {
    /// `6s⁵ − 15s⁴ + 10s³`
    Quintic,
    /// `20s⁷ − 76s⁶ + 114s⁵ − 83s⁴ + 26s³`
    Seventh,
}

// Coefficients in ascending powers, s⁰ … s⁷.
const QUINTIC: [f64; 8] = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0, 0.0, 0.0];
const SEVENTH: [f64; 8] = [0.0, 0.0, 0.0, 26.0, -83.0, 114.0, -76.0, 20.0];

impl ShapeOrder {
    fn coefficients(self) -> &'static [f64; 8] {
        match self {
            ShapeOrder::Quintic => &QUINTIC,
            ShapeOrder::Seventh => &SEVENTH,
        }
    }
}

/// `(σ, σ′, σ″)` at normalized time `s`; derivatives are taken with respect to `s`.
pub fn shape_eval(order: ShapeOrder, s: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("normalized time {s} outside [0, 1]")));
    }
    Ok(shape_eval_unchecked(order, s))
}

#[inline]
fn shape_eval_unchecked(order: ShapeOrder, s: f64) -> (f64, f64, f64) {
    let c = order.coefficients();
    let mut v = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for k in (0..8).rev() {
        v = v * s + c[k];
        if k >= 1 {
            d1 = d1 * s + k as f64 * c[k];
        }
        if k >= 2 {
            d2 = d2 * s + (k * (k - 1)) as f64 * c[k];
        }
    }
    (v, d1, d2)
}

/// Point-to-point polynomial reference `q(t) = q0 + (qf − q0) σ(t / t_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialProfile {
    pub order: ShapeOrder,
    pub q0: Config2,
    pub qf: Config2,
    pub t_f: f64,
}

impl PolynomialProfile {
    pub fn new(order: ShapeOrder, q0: Config2, qf: Config2, t_f: f64) -> Result<Self> {
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(Error::Domain(format!("duration must be positive, got {t_f}")));
        }
        Ok(Self {
            order,
            q0,
            qf,
            t_f,
        })
    }

    pub fn with_duration(&self, t_f: f64) -> Result<Self> {
        Self::new(self.order, self.q0, self.qf, t_f)
    }

    pub fn displacement(&self) -> Config2 {
        Config2::new(self.qf.theta - self.q0.theta, self.qf.r - self.q0.r)
    }

    pub fn eval(&self, t: f64) -> Result<KinPoint> {
        let slack = 1e-12 * self.t_f;
        if !(t >= -slack && t <= self.t_f + slack) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.t_f
            )));
        }
        let s = (t / self.t_f).clamp(0.0, 1.0);
        let (sig, d1, d2) = shape_eval_unchecked(self.order, s);
        let d = self.displacement();
        let inv_t = 1.0 / self.t_f;
        let inv_t2 = inv_t * inv_t;
        Ok(KinPoint {
            q: Config2::new(self.q0.theta + d.theta * sig, self.q0.r + d.r * sig),
            dq: Config2::new(d.theta * d1 * inv_t, d.r * d1 * inv_t),
            ddq: Config2::new(d.theta * d2 * inv_t2, d.r * d2 * inv_t2),
        })
    }
}

impl Reference for PolynomialProfile {
    fn duration(&self) -> f64 {
        self.t_f
    }

    fn kin_at(&self, t: f64) -> Result<KinPoint> {
        self.eval(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn nominal(order: ShapeOrder, t_f: f64) -> PolynomialProfile {
        PolynomialProfile::new(order, Config2::new(0.0, 1.0), Config2::new(FRAC_PI_4, 4.0), t_f)
            .unwrap()
    }

    #[test]
    fn boundary_values() {
        for order in [ShapeOrder::Quintic, ShapeOrder::Seventh] {
            assert_eq!(shape_eval(order, 0.0).unwrap(), (0.0, 0.0, 0.0));
            assert_eq!(shape_eval(order, 1.0).unwrap(), (1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn quintic_midpoint() {
        let (v, d1, _) = shape_eval(ShapeOrder::Quintic, 0.5).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        assert_relative_eq!(d1, 1.875, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_shape() {
        assert!(shape_eval(ShapeOrder::Quintic, -0.01).is_err());
        assert!(shape_eval(ShapeOrder::Seventh, 1.01).is_err());
        assert!(shape_eval(ShapeOrder::Seventh, f64::NAN).is_err());
    }

    #[test]
    fn profile_endpoints_and_midpoint() {
        let p = nominal(ShapeOrder::Quintic, 4.0);
        let k0 = p.eval(0.0).unwrap();
        assert_eq!(k0.q, Config2::new(0.0, 1.0));
        assert_eq!(k0.dq, Config2::ZERO);
        assert_eq!(k0.ddq, Config2::ZERO);
        let km = p.eval(2.0).unwrap();
        assert_relative_eq!(km.q.r, 2.5, epsilon = 1e-14);
        assert_relative_eq!(km.dq.r, 1.40625, epsilon = 1e-14);
        assert!(p.eval(4.5).is_err());
        assert!(p.eval(-0.1).is_err());
        assert!(PolynomialProfile::new(ShapeOrder::Quintic, Config2::ZERO, Config2::ZERO, 0.0).is_err());
    }

    #[test]
    fn quintic_peak_radial_acceleration() {
        // Extremum of 2s³ − 3s² + s at s = (3 − √3)/6.
        let s_star = (3.0 - 3f64.sqrt()) / 6.0;
        let expected = 60.0 * 3.0 * (2.0 * s_star.powi(3) - 3.0 * s_star.powi(2) + s_star) / 16.0;
        let p = nominal(ShapeOrder::Quintic, 4.0);
        let peak = (0..=40_000)
            .map(|i| p.eval(4.0 * i as f64 / 40_000.0).unwrap().ddq.r.abs())
            .fold(0.0, f64::max);
        assert_relative_eq!(peak, expected, max_relative = 1e-6);
        assert_relative_eq!(expected, 10.0 * 3f64.sqrt() / 16.0, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn quintic_strictly_increasing(a in 0.0001f64..0.9998, gap in 1e-6f64..1e-3) {
            let b = (a + gap).min(0.9999);
            let (va, _, _) = shape_eval(ShapeOrder::Quintic, a).unwrap();
            let (vb, d1, _) = shape_eval(ShapeOrder::Quintic, b).unwrap();
            prop_assert!(vb > va);
            prop_assert!(d1 > 0.0);
        }

        #[test]
        fn finite_differences_match_derivatives(
            order in prop_oneof![Just(ShapeOrder::Quintic), Just(ShapeOrder::Seventh)],
            t_f in 0.5f64..6.0,
            s in 0.01f64..0.99,
        ) {
            let p = nominal(order, t_f);
            let h = 1e-5 * t_f;
            let t = s * t_f;
            let (km, k0, kp) = (p.eval(t - h).unwrap(), p.eval(t).unwrap(), p.eval(t + h).unwrap());
            let v_fd = (kp.q.r - km.q.r) / (2.0 * h);
            let a_fd = (kp.q.r - 2.0 * k0.q.r + km.q.r) / (h * h);
            let v_scale = 3.0 * 4.0 / t_f;
            let a_scale = 3.0 * 200.0 / (t_f * t_f);
            prop_assert!((v_fd - k0.dq.r).abs() < 1e-6 * v_scale);
            prop_assert!((a_fd - k0.ddq.r).abs() < 1e-6 * a_scale);
            let w_fd = (kp.q.theta - km.q.theta) / (2.0 * h);
            prop_assert!((w_fd - k0.dq.theta).abs() < 1e-6 * v_scale);
        }
    }
}
