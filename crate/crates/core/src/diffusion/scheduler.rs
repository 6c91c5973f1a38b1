use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenizer::{TokenSequence, MASK};

/// Noise level `t` to masking probability.
///
/// Cosine, linear and power decrease from 1 at `t = 0` to 0 at `t = 1`.
/// Sigmoid is the normalized logistic ramp and *increases* from 0 to 1; it
/// is kept verbatim rather than flipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskScheduler {
    #[default]
    Cosine,
    Linear,
    Power,
    Sigmoid,
}

impl MaskScheduler {
    pub const ALL: [MaskScheduler; 4] = [
        MaskScheduler::Cosine,
        MaskScheduler::Linear,
        MaskScheduler::Power,
        MaskScheduler::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskScheduler::Cosine => "cosine",
            MaskScheduler::Linear => "linear",
            MaskScheduler::Power => "power",
            MaskScheduler::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for MaskScheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for MaskScheduler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskScheduler::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mask scheduler `{s}`")))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn mask_probability(kind: MaskScheduler, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("noise level {t} outside [0, 1]")));
    }
    let p = match kind {
        MaskScheduler::Cosine => (t * std::f64::consts::FRAC_PI_2).cos(),
        MaskScheduler::Linear => 1.0 - t,
        MaskScheduler::Power => 1.0 - t * t,
        MaskScheduler::Sigmoid => (logistic(t) - logistic(0.0)) / (logistic(1.0) - logistic(0.0)),
    };
    // cos(π/2) is 6e-17, not 0
    Ok(p.clamp(0.0, 1.0))
}

/// Mask each position independently with probability `p_mask`.
pub fn corrupt<R: Rng>(future: &TokenSequence, p_mask: f64, rng: &mut R) -> Result<TokenSequence> {
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::Domain(format!("mask probability {p_mask} outside [0, 1]")));
    }
    if future.has_mask() {
        return Err(Error::Precondition("sequence to corrupt already contains MASK".into()));
    }
    let ids = future
        .ids
        .iter()
        .map(|&id| if rng.random::<f64>() < p_mask { MASK } else { id })
        .collect();
    Ok(TokenSequence::new(ids, future.layout))
}

/// Probability that a non-mask token is still itself after `step` steps of
/// the absorbing chain: `Π_{i ≤ step} (1 − β_i)`.
pub fn absorbing_marginal(betas: &[f64], step: usize) -> Result<f64> {
    if step > betas.len() {
        return Err(Error::Domain(format!("step {step} beyond schedule of length {}", betas.len())));
    }
    let mut survive = 1.0;
    for &b in &betas[..step] {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Domain(format!("transition rate {b} outside [0, 1]")));
        }
        survive *= 1.0 - b;
    }
    Ok(survive)
}

/// One-step transition matrix over `symbols` ordinary states plus a final
/// absorbing MASK state. Rows are the current state.
pub fn absorbing_transition(beta: f64, symbols: usize) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("transition rate {beta} outside [0, 1]")));
    }
    let n = symbols + 1;
    Ok(Tensor::from_fn(n, n, |i, j| {
        if i == symbols {
            if j == symbols {
                1.0
            } else {
                0.0
            }
        } else if j == i {
            1.0 - beta
        } else if j == symbols {
            beta
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tokenizer::PatchLayout;

    const LAYOUT: PatchLayout = PatchLayout { patch_len: 16, wave_len: 8 };

    #[test]
    fn scheduler_examples() {
        assert_eq!(mask_probability(MaskScheduler::Cosine, 0.0).unwrap(), 1.0);
        assert_eq!(mask_probability(MaskScheduler::Linear, 0.5).unwrap(), 0.5);
        assert_eq!(mask_probability(MaskScheduler::Power, 0.5).unwrap(), 0.75);
        assert_eq!(mask_probability(MaskScheduler::Sigmoid, 0.0).unwrap(), 0.0);
        assert!((mask_probability(MaskScheduler::Sigmoid, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(mask_probability(MaskScheduler::Linear, 1.5), Err(Error::Domain(_))));
        assert!(mask_probability(MaskScheduler::Cosine, -0.1).is_err());
    }

    #[test]
    fn scheduler_names_round_trip() {
        for k in MaskScheduler::ALL {
            assert_eq!(k.name().parse::<MaskScheduler>().unwrap(), k);
        }
        assert!("tanh".parse::<MaskScheduler>().is_err());
    }

    #[test]
    fn corrupt_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seq = TokenSequence::new((0..20).collect(), LAYOUT);
        assert_eq!(corrupt(&seq, 0.0, &mut rng).unwrap(), seq);
        assert_eq!(corrupt(&seq, 1.0, &mut rng).unwrap().mask_count(), 20);
        let masked = corrupt(&seq, 1.0, &mut rng).unwrap();
        assert!(matches!(corrupt(&masked, 0.5, &mut rng), Err(Error::Precondition(_))));
    }

    #[test]
    fn corrupt_is_seeded() {
        let seq = TokenSequence::new(vec![1; 64], LAYOUT);
        let a = corrupt(&seq, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = corrupt(&seq, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_masking_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seq = TokenSequence::new(vec![0; 10_000], LAYOUT);
        let frac = corrupt(&seq, 0.5, &mut rng).unwrap().mask_count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(absorbing_marginal(&[0.0; 5], 5).unwrap(), 1.0);
        assert_eq!(absorbing_marginal(&[1.0], 1).unwrap(), 0.0);
        assert_eq!(absorbing_marginal(&[0.5, 0.5], 2).unwrap(), 0.25);
        assert_eq!(absorbing_marginal(&[0.5, 0.5], 0).unwrap(), 1.0);
        assert!(absorbing_marginal(&[0.5], 2).is_err());
        assert!(absorbing_marginal(&[1.5], 1).is_err());
    }

    #[test]
    fn transition_rows_are_distributions() {
        let q = absorbing_transition(0.3, 2).unwrap();
        for i in 0..3 {
            assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(q.get(2, 2), 1.0);
    }
}
