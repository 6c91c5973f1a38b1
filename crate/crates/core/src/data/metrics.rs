use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Mean squared and mean absolute error.
pub fn mse_mae(y: &Tensor, y_hat: &Tensor) -> Result<(f64, f64)> {
    if y.shape() != y_hat.shape() {
        return Err(Error::dim("mse_mae", y.shape(), y_hat.shape()));
    }
    let n = y.numel();
    if n == 0 {
        return Err(Error::Dataset("cannot score empty tensors".into()));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (a, b) in y.data().iter().zip(y_hat.data()) {
        let d = a - b;
        se += d * d;
        ae += d.abs();
    }
    Ok((se / n as f64, ae / n as f64))
}

fn check_pairs(truth: &[Tensor], pred: &[Tensor]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::Dataset("AMAD needs at least one sample".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::dim("amad", &[truth.len()], &[pred.len()]));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.shape() != p.shape() {
            return Err(Error::dim("amad", t.shape(), p.shape()));
        }
        if t.numel() == 0 {
            return Err(Error::Dataset("AMAD sample is empty".into()));
        }
    }
    Ok(())
}

/// Average over samples of `|mean(truth) − mean(pred)|`, each mean taken
/// over every step and channel of the window.
pub fn amad(truth: &[Tensor], pred: &[Tensor]) -> Result<f64> {
    check_pairs(truth, pred)?;
    let total: f64 = truth.iter().zip(pred).map(|(t, p)| (t.mean() - p.mean()).abs()).sum();
    Ok(total / truth.len() as f64)
}

/// Channel-wise AMAD for `[L×C]` windows.
pub fn amad_per_channel(truth: &[Tensor], pred: &[Tensor]) -> Result<Vec<f64>> {
    check_pairs(truth, pred)?;
    let (_, c) = truth[0].expect_2d("amad_per_channel")?;
    let mut acc = vec![0.0; c];
    for (t, p) in truth.iter().zip(pred) {
        let (l, c2) = t.expect_2d("amad_per_channel")?;
        if c2 != c {
            return Err(Error::dim("amad_per_channel", t.shape(), truth[0].shape()));
        }
        for (j, a) in acc.iter_mut().enumerate() {
            let mt = t.column(j).iter().sum::<f64>() / l as f64;
            let mp = p.column(j).iter().sum::<f64>() / l as f64;
            *a += (mt - mp).abs();
        }
    }
    Ok(acc.into_iter().map(|a| a / truth.len() as f64).collect())
}

/// Tokenization schemes compared by token consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenMethod {
    /// One token per patch per channel.
    Patching,
    /// One token per value.
    PerValue,
    /// `k` text tokens per value.
    Text,
    /// Channel-independent trend tokens plus the vocabulary.
    Onecast,
}

impl TokenMethod {
    pub const ALL: [TokenMethod; 4] = [TokenMethod::Patching, TokenMethod::PerValue, TokenMethod::Text, TokenMethod::Onecast];

    pub fn name(self) -> &'static str {
        match self {
            TokenMethod::Patching => "patching",
            TokenMethod::PerValue => "per-value",
            TokenMethod::Text => "text",
            TokenMethod::Onecast => "onecast",
        }
    }
}

impl fmt::Display for TokenMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for TokenMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('_', "-");
        TokenMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown token method `{s}`")))
    }
}

/// Tokens needed to encode an `L×C` window.
///
/// `patching = ⌈L/P⌉·C`, `per-value = L·C`, `text = k·L·C`,
/// `onecast = ⌈L/P⌉ + vocab`.
pub fn token_budget(method: TokenMethod, len: u64, patch: u64, channels: u64, k: u64, vocab: u64) -> Result<u64> {
    if patch == 0 {
        return Err(Error::Config("patch length must be positive".into()));
    }
    let patches = len.div_ceil(patch);
    let overflow = || Error::Config("token budget overflows u64".into());
    match method {
        TokenMethod::Patching => patches.checked_mul(channels).ok_or_else(overflow),
        TokenMethod::PerValue => len.checked_mul(channels).ok_or_else(overflow),
        TokenMethod::Text => k
            .checked_mul(len)
            .and_then(|x| x.checked_mul(channels))
            .ok_or_else(overflow),
        TokenMethod::Onecast => patches.checked_add(vocab).ok_or_else(overflow),
    }
}

/// `reconstruction MSE / final MSE`.
pub fn reconstruction_rate(reconst_mse: f64, final_mse: f64) -> Result<f64> {
    if final_mse == 0.0 {
        return Err(Error::UndefinedRate);
    }
    if !(reconst_mse >= 0.0) || !(final_mse > 0.0) {
        return Err(Error::Domain(format!(
            "rates need non-negative errors, got {reconst_mse} / {final_mse}"
        )));
    }
    Ok(reconst_mse / final_mse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn mse_mae_examples() {
        assert_eq!(mse_mae(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), (0.0, 0.0));
        assert_eq!(mse_mae(&v(&[0.0, 0.0]), &v(&[1.0, -1.0])).unwrap(), (1.0, 1.0));
        assert!(mse_mae(&v(&[0.0]), &v(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn amad_examples() {
        let t = vec![Tensor::full(&[4, 1], 3.0)];
        let p = vec![Tensor::full(&[4, 1], 5.0)];
        assert_eq!(amad(&t, &p).unwrap(), 2.0);
        assert_eq!(amad(&t, &t).unwrap(), 0.0);
        assert!(amad(&[], &[]).is_err());
    }

    #[test]
    fn per_channel_amad() {
        let t = vec![Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap()];
        let p = vec![Tensor::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap()];
        assert_eq!(amad_per_channel(&t, &p).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn budget_cells() {
        use TokenMethod::*;
        assert_eq!(token_budget(Patching, 96, 16, 11, 3, 437).unwrap(), 66);
        assert_eq!(token_budget(PerValue, 96, 16, 2000, 3, 437).unwrap(), 192_000);
        assert_eq!(token_budget(Onecast, 96, 16, 5, 3, 437).unwrap(), 443);
        assert_eq!(token_budget(Patching, 97, 16, 1, 3, 0).unwrap(), 7);
        assert!(token_budget(Patching, 96, 0, 1, 3, 0).is_err());
    }

    #[test]
    fn rates() {
        assert!((reconstruction_rate(0.010, 0.173).unwrap() - 0.0578).abs() < 5e-5);
        assert_eq!(reconstruction_rate(0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(reconstruction_rate(1.0, 0.0), Err(Error::UndefinedRate)));
    }

    #[test]
    fn method_names() {
        for m in TokenMethod::ALL {
            assert_eq!(m.name().parse::<TokenMethod>().unwrap(), m);
        }
        assert_eq!("per_value".parse::<TokenMethod>().unwrap(), TokenMethod::PerValue);
    }
}
