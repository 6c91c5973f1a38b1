//! Seasonal forecasting over a fixed bank of sinusoids.
//!
//! Channel `i` of a seasonal series is modeled as
//! `Σⱼ sinᵢⱼ · sin(ωⱼ t) + cosᵢⱼ · cos(ωⱼ t)` where the frequencies `ωⱼ` are
//! fixed and only the weights vary per window. Time is indexed absolutely
//! within a window pair: history occupies `t ∈ [0, L_h)` and the future
//! `t ∈ [L_h, L_h + L_f)`, so phases carry across the boundary.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{layers, Graph, ParamStore, Tensor, Var};

/// Divisors applied to each natural period to build the default bank.
pub const DEFAULT_HARMONICS: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0];

pub const PREFIX: &str = "seasonal";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalBasis {
    frequencies: Vec<f64>,
    /// Steps per day of the data this bank was built for, if known.
    pub sample_rate_hint: Option<f64>,
}

impl SeasonalBasis {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn periods(&self) -> Vec<f64> {
        self.frequencies.iter().map(|w| 2.0 * PI / w).collect()
    }

    /// `[T × 2N]` design matrix: sine columns first, then cosine columns,
    /// evaluated at `t_start..t_start + len`.
    pub fn design_matrix(&self, t_start: usize, len: usize) -> Tensor {
        let n = self.len();
        Tensor::from_fn(len, 2 * n, |i, j| {
            let t = (t_start + i) as f64;
            if j < n {
                (self.frequencies[j] * t).sin()
            } else {
                (self.frequencies[j - n] * t).cos()
            }
        })
    }

    /// Smallest eigenvalue of the Gram matrix of the design matrix.
    pub fn gram_min_eigenvalue(&self, t_start: usize, len: usize) -> f64 {
        let x = self.design_matrix(t_start, len);
        let m = to_matrix(&x);
        let gram = m.transpose() * &m;
        SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Fails if the bank is not linearly independent over `len` samples.
    pub fn check_independent(&self, len: usize) -> Result<()> {
        let ev = self.gram_min_eigenvalue(0, len);
        if ev > 1e-8 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "seasonal basis is degenerate over {len} steps (min Gram eigenvalue {ev:.3e})"
            )))
        }
    }
}

/// Frequencies `2π / period`, sorted ascending with duplicates removed.
pub fn build_basis(periods_in_steps: &[f64]) -> Result<SeasonalBasis> {
    if periods_in_steps.is_empty() {
        return Err(Error::Config("seasonal basis needs at least one period".into()));
    }
    let mut freqs = Vec::with_capacity(periods_in_steps.len());
    for &p in periods_in_steps {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Config(format!("seasonal period must exceed 1 step, got {p}")));
        }
        freqs.push(2.0 * PI / p);
    }
    freqs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    freqs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    Ok(SeasonalBasis {
        frequencies: freqs,
        sample_rate_hint: None,
    })
}

/// Harmonics `P, P/2, P/3, P/4, P/6, P/8` of every natural period, keeping
/// only periods longer than two steps.
pub fn default_bank(natural_periods: &[f64]) -> Result<SeasonalBasis> {
    let mut periods = Vec::new();
    for &p in natural_periods {
        for h in DEFAULT_HARMONICS {
            let q = p / h;
            if q > 2.0 {
                periods.push(q);
            }
        }
    }
    build_basis(&periods)
}

/// Per-channel sine and cosine weights, each `[N × C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonalWeights {
    pub sin: Tensor,
    pub cos: Tensor,
}

impl SeasonalWeights {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            sin: Tensor::zeros(&[n, c]),
            cos: Tensor::zeros(&[n, c]),
        }
    }

    /// `[2N × C]` with sine rows first.
    pub fn stacked(&self) -> Tensor {
        let mut data = self.sin.data().to_vec();
        data.extend_from_slice(self.cos.data());
        let (n, c) = (self.sin.rows(), self.sin.cols());
        Tensor::new(vec![2 * n, c], data).expect("consistent halves")
    }

    pub fn from_stacked(t: &Tensor) -> Result<Self> {
        let (rows, _) = t.expect_2d("seasonal_weights")?;
        if rows % 2 != 0 {
            return Err(Error::dim("seasonal_weights", t.shape(), &[rows + 1]));
        }
        let n = rows / 2;
        Ok(Self {
            sin: t.slice_rows(0, n),
            cos: t.slice_rows(n, n),
        })
    }

    /// Weights rescaled per channel, e.g. into raw units by `sqrt(σ² + ε)`.
    pub fn scaled_by_channel(&self, scale: &[f64]) -> Self {
        let f = |t: &Tensor| Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j) * scale[j]);
        Self {
            sin: f(&self.sin),
            cos: f(&self.cos),
        }
    }
}

/// Weighted sinusoid sum at absolute indices `t_start..t_start + len`.
pub fn evaluate_basis(basis: &SeasonalBasis, weights: &SeasonalWeights, t_start: usize, len: usize) -> Result<Tensor> {
    if len == 0 {
        return Err(Error::Config("seasonal evaluation length must be positive".into()));
    }
    if weights.sin.rows() != basis.len() || weights.sin.shape() != weights.cos.shape() {
        return Err(Error::dim("evaluate_basis", &[basis.len()], weights.sin.shape()));
    }
    basis.design_matrix(t_start, len).matmul(&weights.stacked())
}

/// Least-squares weights for `series[T×C]` sampled from `t_start`,
/// solved through the normal equations.
pub fn fit_weights(basis: &SeasonalBasis, series: &Tensor, t_start: usize) -> Result<SeasonalWeights> {
    let (len, c) = series.expect_2d("fit_weights")?;
    let x = to_matrix(&basis.design_matrix(t_start, len));
    let y = to_matrix(series);
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("seasonal Gram matrix is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    let stacked = Tensor::from_fn(2 * basis.len(), c, |i, j| sol[(i, j)]);
    SeasonalWeights::from_stacked(&stacked)
}

fn to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

/// Registers the shared two-layer weight predictor. The output layer starts
/// at zero so an untrained model forecasts no seasonality.
pub fn init_params<R: Rng>(store: &mut ParamStore, history_len: usize, hidden: usize, n_basis: usize, rng: &mut R) -> Result<()> {
    layers::linear_params(store, &format!("{PREFIX}.l1"), history_len, hidden, rng)?;
    store.insert(format!("{PREFIX}.l2.w"), Tensor::zeros(&[hidden, 2 * n_basis]))?;
    store.insert(format!("{PREFIX}.l2.b"), Tensor::zeros(&[2 * n_basis]))
}

/// Stacked `[2N × C]` weights predicted from a `[L_h × C]` seasonal history.
/// Each channel is flattened into one MLP input row, so the MLP is shared
/// across channels and applied to each independently.
pub fn predict_weights_graph(g: &mut Graph, store: &ParamStore, history_season: Var) -> Result<Var> {
    let (l, _) = g.value(history_season).expect_2d("predict_weights")?;
    let expected = store.value(&format!("{PREFIX}.l1.w"))?.rows();
    if l != expected {
        return Err(Error::dim("predict_weights", g.shape(history_season), &[expected]));
    }
    let rows = g.transpose(history_season)?;
    let h = layers::linear_fwd(g, store, &format!("{PREFIX}.l1"), rows)?;
    let h = g.gelu(h);
    let out = layers::linear_fwd(g, store, &format!("{PREFIX}.l2"), h)?;
    g.transpose(out)
}

pub fn predict_weights(store: &ParamStore, history_season: &Tensor) -> Result<SeasonalWeights> {
    let mut g = Graph::new();
    let x = g.constant(history_season.clone());
    let w = predict_weights_graph(&mut g, store, x)?;
    SeasonalWeights::from_stacked(g.value(w))
}

/// Seasonal forecast `[L_f × C]` inside a graph from stacked weights.
pub fn forecast_graph(g: &mut Graph, basis: &SeasonalBasis, weights: Var, t_start: usize, len: usize) -> Result<Var> {
    let design = g.constant(basis.design_matrix(t_start, len));
    g.matmul(design, weights)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn build_examples() {
        let b = build_basis(&[24.0]).unwrap();
        assert!((b.frequencies()[0] - 2.0 * PI / 24.0).abs() < 1e-15);
        assert!((b.frequencies()[0] - 0.2618).abs() < 1e-4);
        assert_eq!(build_basis(&[24.0, 24.0]).unwrap().len(), 1);
        let two = build_basis(&[24.0, 168.0]).unwrap();
        assert!(two.frequencies()[0] < two.frequencies()[1]);
        assert!((two.frequencies()[0] - 2.0 * PI / 168.0).abs() < 1e-15);
        assert!(build_basis(&[]).is_err());
        assert!(build_basis(&[1.0]).is_err());
    }

    #[test]
    fn default_bank_for_daily_and_weekly() {
        let b = default_bank(&[24.0, 168.0]).unwrap();
        assert_eq!(b.len(), 12);
        b.check_independent(24 * 7 * 2).unwrap();
        let daily = default_bank(&[24.0]).unwrap();
        assert_eq!(daily.len(), 6);
        assert!(daily.gram_min_eigenvalue(0, 96) > 0.0);
    }

    #[test]
    fn zero_weights_zero_series() {
        let b = build_basis(&[24.0, 12.0]).unwrap();
        let y = evaluate_basis(&b, &SeasonalWeights::zeros(2, 3), 5, 10).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_at_origin() {
        let b = build_basis(&[24.0]).unwrap();
        let mut w = SeasonalWeights::zeros(1, 1);
        w.cos.set(0, 0, 1.0);
        let y = evaluate_basis(&b, &w, 0, 4).unwrap();
        assert_eq!(y.data()[0], 1.0);
    }

    #[test]
    fn least_squares_recovers_pure_sine() {
        let b = build_basis(&[24.0]).unwrap();
        let x = Tensor::from_fn(96, 1, |t, _| (2.0 * PI * t as f64 / 24.0).sin());
        let w = fit_weights(&b, &x, 0).unwrap();
        assert!((w.sin.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(w.cos.get(0, 0).abs() < 1e-9);
        let back = evaluate_basis(&b, &w, 0, 96).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn zero_history_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        init_params(&mut store, 8, 4, 3, &mut rng).unwrap();
        let w = predict_weights(&store, &Tensor::zeros(&[8, 2])).unwrap();
        assert!(w.stacked().data().iter().all(|&v| v == 0.0));
        assert!(predict_weights(&store, &Tensor::zeros(&[7, 2])).is_err());
    }

    #[test]
    fn identical_channels_identical_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        init_params(&mut store, 8, 4, 2, &mut rng).unwrap();
        store.set(
            format!("{PREFIX}.l2.w"),
            crate::numerics::init::normal(&[4, 4], 1.0, &mut rng),
        );
        let h = Tensor::from_fn(8, 2, |t, _| (t as f64 * 0.7).sin());
        let w = predict_weights(&store, &h).unwrap().stacked();
        for i in 0..4 {
            assert_eq!(w.get(i, 0), w.get(i, 1));
        }
    }
}
