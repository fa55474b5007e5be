//! Synthetic measurement-noise families for strain paths.
//!
//! Noise is defined in the min-max normalized strain space (scaling by the
//! component bounds ±ε_bound to [0, 1]), sampled independently per path,
//! component and time step, then denormalized. Targets (stresses) are never
//! touched. Three distributions at four levels:
//!
//! | distribution    | parameter | low  | medium | high | very high |
//! |-----------------|-----------|------|--------|------|-----------|
//! | Gaussian        | ε_std     | 0.01 | 0.025  | 0.05 | 0.1       |
//! | Uniform         | ε_amp     | 0.04 | 0.1    | 0.2  | 0.4       |
//! | Spiked Gaussian | ε_std     | 0.01 | 0.025  | 0.05 | 0.1       |
//!
//! The spiked Gaussian superimposes ε_spk·B(p) with ε_spk = 0.2, p = 0.05.
//! Heteroscedastic variants add an independent component scaled by
//! α(t) = ‖ε_t‖/ε_bound (tensor norm of the noiseless strain), which vanishes
//! exactly at zero strain.

use super::LocalDataset;
use crate::tensor::{SymTensor3, TensorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SPIKE_MAGNITUDE: f64 = 0.2;
pub const SPIKE_PROBABILITY: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDistribution {
    Gaussian,
    Uniform,
    SpikedGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    Low,
    Medium,
    High,
    VeryHigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variability {
    Homoscedastic,
    Heteroscedastic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub distribution: NoiseDistribution,
    pub level: NoiseLevel,
    pub variability: Variability,
}

impl NoiseSpec {
    /// Table parameter of the distribution at this level (std or amplitude, in
    /// the normalized strain space).
    pub fn parameter(&self) -> f64 {
        let idx = match self.level {
            NoiseLevel::Low => 0,
            NoiseLevel::Medium => 1,
            NoiseLevel::High => 2,
            NoiseLevel::VeryHigh => 3,
        };
        match self.distribution {
            NoiseDistribution::Gaussian | NoiseDistribution::SpikedGaussian => {
                [0.01, 0.025, 0.05, 0.1][idx]
            }
            NoiseDistribution::Uniform => [0.04, 0.1, 0.2, 0.4][idx],
        }
    }
}

/// One normalized-space draw, split for diagnostics: the base (plus optional
/// heteroscedastic) component and the spike indicator.
#[derive(Clone, Copy, Debug)]
pub struct NoiseDraw {
    pub base: f64,
    pub heteroscedastic: f64,
    pub spiked: bool,
}

impl NoiseDraw {
    pub fn total(&self) -> f64 {
        self.base + self.heteroscedastic + if self.spiked { SPIKE_MAGNITUDE } else { 0.0 }
    }
}

/// Samples one draw; `alpha` is the heteroscedastic scale α(t) (0 disables the
/// extra component exactly).
pub fn sample_draw(spec: &NoiseSpec, alpha: f64, rng: &mut ChaCha8Rng) -> NoiseDraw {
    let p = spec.parameter();
    let normal = standard_normal(rng);
    let (base, het_raw) = match spec.distribution {
        NoiseDistribution::Gaussian | NoiseDistribution::SpikedGaussian => {
            let b = p * normal;
            let extra = p * standard_normal(rng);
            (b, extra)
        }
        NoiseDistribution::Uniform => {
            let b = rng.gen_range(-0.5 * p..0.5 * p);
            let extra = rng.gen_range(-0.5 * p..0.5 * p);
            (b, extra)
        }
    };
    let het = match spec.variability {
        Variability::Homoscedastic => 0.0,
        Variability::Heteroscedastic => alpha * het_raw,
    };
    let spiked = matches!(spec.distribution, NoiseDistribution::SpikedGaussian)
        && rng.gen_range(0.0..1.0) < SPIKE_PROBABILITY;
    NoiseDraw {
        base,
        heteroscedastic: het,
        spiked,
    }
}

/// Standard normal draw via Box-Muller.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Injects noise into every strain path of a data set; stresses stay noiseless.
/// Draws are independent per path, component and step, with per-path RNG
/// streams derived from `seed`.
pub fn inject_noise(dataset: &LocalDataset, spec: &NoiseSpec, seed: u64) -> LocalDataset {
    let bound = dataset.spec.strain_bound;
    let mut out = dataset.clone();
    for (i, sample) in out.paths.iter_mut().enumerate() {
        let mut rng = super::path_rng(seed ^ 0x6e6f_6973, i);
        for step in sample.strain.iter_mut() {
            let tensor = SymTensor3::from_tensor_components(*step, TensorKind::Strain);
            let alpha = tensor.norm() / bound;
            for comp in step.iter_mut() {
                // min-max normalize to [0, 1], add, denormalize
                let n = (*comp + bound) / (2.0 * bound);
                let noisy = n + sample_draw(spec, alpha, &mut rng).total();
                *comp = noisy * 2.0 * bound - bound;
            }
        }
    }
    out
}
