//! Seeded synthetic corpora for experiments that need known structure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::TokenPair;
use crate::numerics::Tensor;

/// Sinusoid plus a shared linear ramp plus Gaussian noise. Each channel
/// gets its own phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinRampSpec {
    pub len: usize,
    pub channels: usize,
    pub period: f64,
    pub amplitude: f64,
    /// Ramp increase per step.
    pub slope: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SinRampSpec {
    fn default() -> Self {
        Self {
            len: 4000,
            channels: 2,
            period: 24.0,
            amplitude: 1.0,
            slope: 0.003,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn sin_ramp(spec: &SinRampSpec) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..spec.channels).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let mut out = Tensor::zeros(&[spec.len, spec.channels]);
    for t in 0..spec.len {
        for (c, phase) in phases.iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let x = spec.amplitude * (2.0 * PI * t as f64 / spec.period + phase).sin() + spec.slope * t as f64 + spec.noise * eps;
            out.set(t, c, x);
        }
    }
    out
}

/// Noise-free `amplitude · sin(2πt / period)` on every channel.
pub fn pure_sine(len: usize, channels: usize, period: f64, amplitude: f64) -> Tensor {
    Tensor::from_fn(len, channels, |t, _| amplitude * (2.0 * PI * t as f64 / period).sin())
}

/// Seasonal signal riding on a piecewise-linear level whose slope is
/// redrawn every `segment_len` steps, so that a future window's level
/// usually differs from its history's. Optional jumps add an unpredictable
/// step at segment boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelShiftSpec {
    pub len: usize,
    pub channels: usize,
    pub period: f64,
    pub amplitude: f64,
    pub segment_len: usize,
    /// Slopes are uniform in `[-max_slope, max_slope]` per step.
    pub max_slope: f64,
    /// Alternate between `+max_slope` and `-max_slope` every segment instead
    /// of drawing slopes, so the drift seen in a history window usually
    /// continues into its future at a known rate.
    pub alternating: bool,
    pub jump: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for LevelShiftSpec {
    fn default() -> Self {
        Self {
            len: 4000,
            channels: 2,
            period: 24.0,
            amplitude: 1.0,
            segment_len: 300,
            max_slope: 0.01,
            alternating: false,
            jump: 0.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn level_shift(spec: &LevelShiftSpec) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let seg = spec.segment_len.max(1);
    let phases: Vec<f64> = (0..spec.channels).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let mut level = vec![0.0; spec.channels];
    let mut slope = vec![0.0; spec.channels];
    let mut out = Tensor::zeros(&[spec.len, spec.channels]);
    for t in 0..spec.len {
        if t % seg == 0 {
            for c in 0..spec.channels {
                slope[c] = if spec.alternating {
                    let sign = if (t / seg).is_multiple_of(2) { 1.0 } else { -1.0 };
                    sign * spec.max_slope
                } else {
                    (rng.random::<f64>() * 2.0 - 1.0) * spec.max_slope
                };
                if t > 0 && spec.jump > 0.0 {
                    level[c] += if rng.random::<bool>() { spec.jump } else { -spec.jump };
                }
            }
        }
        for c in 0..spec.channels {
            level[c] += slope[c];
            let eps: f64 = StandardNormal.sample(&mut rng);
            let season = spec.amplitude * (2.0 * PI * t as f64 / spec.period + phases[c]).sin();
            out.set(t, c, level[c] + season + spec.noise * eps);
        }
    }
    out
}

/// Token pairs whose future repeats the history position by position.
pub fn token_copy(pairs: usize, tokens: usize, vocab: usize, seed: u64) -> Vec<TokenPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let history: Vec<usize> = (0..tokens).map(|_| rng.random_range(0..vocab)).collect();
            TokenPair {
                future: history.clone(),
                history,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_ramp_is_seeded_and_ramps() {
        let spec = SinRampSpec::default();
        let a = sin_ramp(&spec);
        assert_eq!(a, sin_ramp(&spec));
        assert_eq!(a.shape(), &[4000, 2]);
        let head = a.slice_rows(0, 240).mean();
        let tail = a.slice_rows(3760, 240).mean();
        assert!((tail - head - 0.003 * 3760.0).abs() < 0.1);
    }

    #[test]
    fn pure_sine_values() {
        let s = pure_sine(48, 1, 24.0, 1.0);
        assert_eq!(s.get(0, 0), 0.0);
        assert!((s.get(6, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn level_shift_moves_levels() {
        let s = level_shift(&LevelShiftSpec::default());
        let means: Vec<f64> = (0..13).map(|k| s.slice_rows(k * 300, 300).mean()).collect();
        let spread = means.iter().cloned().fold(f64::MIN, f64::max) - means.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.5, "{means:?}");
    }

    #[test]
    fn copy_pairs() {
        let p = token_copy(5, 12, 16, 1);
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|x| x.history == x.future && x.history.iter().all(|&t| t < 16)));
    }
}
