//! Seeded noise injection.
//!
//! Every draw is addressed by `(seed, channel, index)` and gets its own generator,
//! so the value never depends on the order in which trials or samples are evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::InputSchedule;
use crate::dynamics::{Config2, State};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Input,
    Measurement,
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Uniform,
    TruncatedGaussian,
}

/// Noise on a pair of channels: `(τ, f)` for input noise, `(θ, r)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub bounds: [f64; 2],
    pub distribution: NoiseDistribution,
    /// Gaussian σ as a fraction of the bound.
    pub sigma_fraction: f64,
}

impl NoiseSpec {
    /// Truncated Gaussian with σ = bound / 3.
    pub fn gaussian(kind: NoiseKind, bounds: [f64; 2]) -> Self {
        Self {
            kind,
            bounds,
            distribution: NoiseDistribution::TruncatedGaussian,
            sigma_fraction: 1.0 / 3.0,
        }
    }

    pub fn uniform(kind: NoiseKind, bounds: [f64; 2]) -> Self {
        Self {
            kind,
            bounds,
            distribution: NoiseDistribution::Uniform,
            sigma_fraction: 1.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::Config("noise bounds must be finite and non-negative".into()));
        }
        if !(self.sigma_fraction > 0.0 && self.sigma_fraction <= 1.0) {
            return Err(Error::Config("sigma_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: NoiseKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::Config(format!(
                "expected {kind:?} noise, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// One draw for `channel` (0 or 1) at `index`.
    pub fn sample(&self, seed: u64, channel: u64, index: u64) -> f64 {
        let bound = self.bounds[(channel & 1) as usize];
        if bound == 0.0 {
            return 0.0;
        }
        let stream = match self.kind {
            NoiseKind::Input => 0,
            NoiseKind::Measurement => 2,
            NoiseKind::Initial => 4,
        } + (channel & 1);
        let mut rng = stream_rng(seed, stream, index);
        let v = match self.distribution {
            NoiseDistribution::Uniform => rng.random_range(-bound..=bound),
            NoiseDistribution::TruncatedGaussian => {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * self.sigma_fraction * bound
            }
        };
        v.clamp(-bound, bound)
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-run `index` of a run seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let key = mix64(derive_seed(seed, stream) ^ mix64(index));
    ChaCha8Rng::seed_from_u64(key)
}

/// Adds independent per-node noise to both channels of `sched`.
pub fn perturb_schedule(sched: &InputSchedule, spec: &NoiseSpec, seed: u64) -> Result<InputSchedule> {
    spec.expect_kind(NoiseKind::Input)?;
    let tau = sched
        .tau_values()
        .iter()
        .enumerate()
        .map(|(k, v)| v + spec.sample(seed, 0, k as u64))
        .collect();
    let f = sched
        .f_values()
        .iter()
        .enumerate()
        .map(|(k, v)| v + spec.sample(seed, 1, k as u64))
        .collect();
    sched.with_values(tau, f)
}

/// Noisy position read-out; velocities are not measured.
pub fn measure(x: &State, spec: &NoiseSpec, seed: u64, sample_index: u64) -> Result<Config2> {
    spec.expect_kind(NoiseKind::Measurement)?;
    Ok(Config2::new(
        x.theta + spec.sample(seed, 0, sample_index),
        x.r + spec.sample(seed, 1, sample_index),
    ))
}
