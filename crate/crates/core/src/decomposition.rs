//! Instance normalization and the moving-average trend/season split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MA_WINDOW: usize = 25;

/// A contiguous `L×C` slab of observations from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesWindow {
    pub values: Tensor,
    pub domain_id: String,
}

impl SeriesWindow {
    pub fn new(values: Tensor, domain_id: impl Into<String>) -> Result<Self> {
        let (l, c) = values.expect_2d("series_window")?;
        if l == 0 || c == 0 {
            return Err(Error::Dataset("series window must have at least one step and channel".into()));
        }
        if !values.is_finite() {
            return Err(Error::Dataset("series window contains non-finite values".into()));
        }
        Ok(Self {
            values,
            domain_id: domain_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.values.cols()
    }
}

/// Per-channel mean and standard deviation of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: f64,
}

impl NormStats {
    /// `μ = 0`, `σ² + ε = 1`.
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma: vec![(1.0 - epsilon).max(0.0).sqrt(); channels],
            epsilon,
        }
    }

    /// `sqrt(σ² + ε)` per channel.
    pub fn scale(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| (s * s + self.epsilon).sqrt()).collect()
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// `(x − μ) / sqrt(σ² + ε)` per channel, with population statistics.
pub fn instance_normalize(window: &SeriesWindow, epsilon: f64) -> Result<(Tensor, NormStats)> {
    normalize_values(&window.values, epsilon)
}

pub fn normalize_values(values: &Tensor, epsilon: f64) -> Result<(Tensor, NormStats)> {
    let (l, c) = values.expect_2d("instance_normalize")?;
    if l < 2 {
        return Err(Error::WindowTooShort { len: l, min: 2 });
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut mu = vec![0.0; c];
    let mut sigma = vec![0.0; c];
    for j in 0..c {
        let m = (0..l).map(|i| values.get(i, j)).sum::<f64>() / l as f64;
        let var = (0..l).map(|i| (values.get(i, j) - m).powi(2)).sum::<f64>() / l as f64;
        mu[j] = m;
        sigma[j] = var.sqrt();
    }
    let stats = NormStats { mu, sigma, epsilon };
    let scale = stats.scale();
    let out = Tensor::from_fn(l, c, |i, j| (values.get(i, j) - stats.mu[j]) / scale[j]);
    Ok((out, stats))
}

/// `x · sqrt(σ² + ε) + μ` per channel; inverse of [`instance_normalize`].
pub fn denormalize(x: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let (l, c) = x.expect_2d("denormalize")?;
    if c != stats.channels() || stats.sigma.len() != c {
        return Err(Error::dim("denormalize", x.shape(), &[stats.channels()]));
    }
    let scale = stats.scale();
    Ok(Tensor::from_fn(l, c, |i, j| x.get(i, j) * scale[j] + stats.mu[j]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendSeason {
    pub trend: Tensor,
    pub season: Tensor,
}

/// Normalized trend and season of one window plus the statistics that
/// produced the normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedWindow {
    pub trend: Tensor,
    pub season: Tensor,
    pub stats: NormStats,
}

/// Trailing moving average of width `n`; steps before the start of the
/// window replicate the first value. `season = x − trend`.
pub fn moving_average_decompose(x_norm: &Tensor, window_n: usize) -> Result<TrendSeason> {
    if window_n < 1 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let (l, c) = x_norm.expect_2d("moving_average_decompose")?;
    let mut trend = Tensor::zeros(&[l, c]);
    for j in 0..c {
        for t in 0..l {
            let mut acc = 0.0;
            for i in 0..window_n {
                acc += x_norm.get(t.saturating_sub(i), j);
            }
            trend.set(t, j, acc / window_n as f64);
        }
    }
    let season = x_norm.zip_map(&trend, |x, tr| x - tr)?;
    Ok(TrendSeason { trend, season })
}

/// Normalize then split.
pub fn decompose(window: &SeriesWindow, epsilon: f64, window_n: usize) -> Result<DecomposedWindow> {
    decompose_values(&window.values, epsilon, window_n)
}

pub fn decompose_values(values: &Tensor, epsilon: f64, window_n: usize) -> Result<DecomposedWindow> {
    let (norm, stats) = normalize_values(values, epsilon)?;
    let TrendSeason { trend, season } = moving_average_decompose(&norm, window_n)?;
    Ok(DecomposedWindow { trend, season, stats })
}

/// Mean over points of `|r| / (|t| + |s| + |r|)`; points with a zero
/// denominator contribute 0.
pub fn residual_component_rate(trend: &Tensor, season: &Tensor, residual: &Tensor) -> Result<f64> {
    if trend.shape() != season.shape() || trend.shape() != residual.shape() {
        return Err(Error::dim("residual_component_rate", trend.shape(), residual.shape()));
    }
    let n = trend.numel();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = trend
        .data()
        .iter()
        .zip(season.data())
        .zip(residual.data())
        .map(|((t, s), r)| {
            let denom = t.abs() + s.abs() + r.abs();
            if denom == 0.0 {
                0.0
            } else {
                r.abs() / denom
            }
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let w = SeriesWindow::new(col(&[5.0; 4]), "d").unwrap();
        let (x, s) = instance_normalize(&w, 1e-5).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.mu, vec![5.0]);
        assert_eq!(s.sigma, vec![0.0]);
    }

    #[test]
    fn unit_std_stays_put() {
        let w = SeriesWindow::new(col(&[-1.0, 1.0]), "d").unwrap();
        let (x, _) = instance_normalize(&w, 1e-14).unwrap();
        assert!((x.data()[0] + 1.0).abs() < 1e-12);
        assert!((x.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        let w = SeriesWindow::new(col(&[1.0]), "d").unwrap();
        assert!(matches!(instance_normalize(&w, 1e-5), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn denormalize_examples() {
        let stats = NormStats {
            mu: vec![2.0],
            sigma: vec![3.0],
            epsilon: 1e-5,
        };
        let y = denormalize(&Tensor::zeros(&[3, 1]), &stats).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));

        let id = NormStats::identity(2, 0.25);
        let x = Tensor::from_fn(3, 2, |i, j| i as f64 - j as f64 * 0.5);
        let y = denormalize(&x, &id).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn moving_average_examples() {
        let x = col(&[1.0, 2.0, 3.0, 4.0]);
        let d = moving_average_decompose(&x, 2).unwrap();
        assert_eq!(d.trend.data(), &[1.0, 1.5, 2.5, 3.5]);
        assert_eq!(d.season.data(), &[0.0, 0.5, 0.5, 0.5]);

        let d1 = moving_average_decompose(&x, 1).unwrap();
        assert_eq!(d1.trend, x);
        assert!(d1.season.data().iter().all(|&v| v == 0.0));

        let c = col(&[0.7; 10]);
        let dc = moving_average_decompose(&c, 5).unwrap();
        assert!(dc.trend.max_abs_diff(&c) < 1e-15);
        assert!(dc.season.data().iter().all(|v| v.abs() < 1e-15));

        assert!(moving_average_decompose(&x, 0).is_err());
    }

    #[test]
    fn rcr_examples() {
        let one = |v: f64| col(&[v]);
        assert_eq!(residual_component_rate(&one(3.0), &one(1.0), &one(0.0)).unwrap(), 0.0);
        assert_eq!(residual_component_rate(&one(0.0), &one(0.0), &one(-2.0)).unwrap(), 1.0);
        assert!((residual_component_rate(&one(3.0), &one(1.0), &one(1.0)).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(residual_component_rate(&one(0.0), &one(0.0), &one(0.0)).unwrap(), 0.0);
    }
}
