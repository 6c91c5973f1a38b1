use rayon::prelude::*;

use super::model::OneCast;
use crate::data::{amad, amad_per_channel, mse_mae, reconstruction_rate, EvalReport, HorizonMetrics, WindowPair};
use crate::decomposition::{decompose_values, residual_component_rate};
use crate::diffusion::token_accuracy;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seasonal::{evaluate_basis, fit_weights};
use crate::tokenizer;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Each horizon scores the first `h` steps of the full forecast.
    pub horizons: Vec<usize>,
    /// Denoising rounds; the model's setting when unset.
    pub steps: Option<usize>,
    /// Score the truth against itself (checks the metric plumbing).
    pub truth_as_forecast: bool,
}

/// Repeat-last-value baseline.
pub fn repeat_last(history: &Tensor, horizon: usize) -> Tensor {
    let last = history.rows() - 1;
    Tensor::from_fn(horizon, history.cols(), |_, j| history.get(last, j))
}

/// Per-horizon error metrics of `preds` against `truths`, truncating both.
pub fn horizon_metrics(truths: &[Tensor], preds: &[Tensor], horizon: usize) -> Result<HorizonMetrics> {
    let cut = |ts: &[Tensor]| -> Result<Vec<Tensor>> {
        ts.iter()
            .map(|t| {
                if t.rows() < horizon {
                    Err(Error::Config(format!("horizon {horizon} exceeds forecast length {}", t.rows())))
                } else {
                    Ok(t.slice_rows(0, horizon))
                }
            })
            .collect()
    };
    let (t, p) = (cut(truths)?, cut(preds)?);
    if t.is_empty() {
        return Err(Error::Dataset("no windows to evaluate".into()));
    }
    let (mut mse, mut mae) = (0.0, 0.0);
    for (a, b) in t.iter().zip(&p) {
        let (s, m) = mse_mae(a, b)?;
        mse += s;
        mae += m;
    }
    let n = t.len() as f64;
    Ok(HorizonMetrics {
        horizon,
        mse: mse / n,
        mae: mae / n,
        amad: amad(&t, &p)?,
        amad_per_channel: amad_per_channel(&t, &p)?,
    })
}

/// Residual component rate of a history window: trend from the moving
/// average, season from a least-squares fit of the remainder onto the
/// model's basis, residual from whatever the fit misses.
pub fn history_rcr(model: &OneCast, history: &Tensor) -> Result<f64> {
    let cfg = &model.config;
    let dec = decompose_values(history, cfg.epsilon, cfg.ma_window)?;
    let weights = fit_weights(&model.basis, &dec.season, 0)?;
    let fitted = evaluate_basis(&model.basis, &weights, 0, cfg.history_len)?;
    let residual = dec.season.zip_map(&fitted, |a, b| a - b)?;
    residual_component_rate(&dec.trend, &fitted, &residual)
}

struct WindowResult {
    forecast: Tensor,
    accuracy: Option<f64>,
    reconstruction: Option<f64>,
    rcr: f64,
}

/// Test-split report for one domain.
pub fn evaluate(model: &OneCast, domain: &str, test: &[WindowPair], opts: &EvalOptions) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Dataset(format!("domain `{domain}` has no test windows")));
    }
    if opts.horizons.is_empty() {
        return Err(Error::Config("no evaluation horizons".into()));
    }
    for &h in &opts.horizons {
        if h == 0 || h > model.config.horizon {
            return Err(Error::Config(format!(
                "horizon {h} outside 1..={} of this checkpoint",
                model.config.horizon
            )));
        }
    }
    model.domain(domain)?;
    let has_trend = model.config.variant.has_trend();
    let results: Vec<WindowResult> = test
        .par_iter()
        .map(|w| {
            let rcr = history_rcr(model, &w.history)?;
            if opts.truth_as_forecast {
                return Ok(WindowResult {
                    forecast: w.future.clone(),
                    accuracy: None,
                    reconstruction: None,
                    rcr,
                });
            }
            let f = model.forecast(domain, &w.history, opts.steps)?;
            let accuracy = match &f.future_tokens {
                Some(pred) => {
                    let prepared = model.prepare(domain, w)?;
                    let truth = tokenizer::tokenize(&model.store, &model.config.tokenizer, domain, &prepared.future.trend)?;
                    Some(token_accuracy(&pred.ids, &truth.ids)?)
                }
                None => None,
            };
            let reconstruction = if has_trend {
                let (trend, rec) = model.reconstruct_history(domain, &w.history)?;
                Some(mse_mae(&trend, &rec)?.0)
            } else {
                None
            };
            Ok(WindowResult {
                forecast: f.values,
                accuracy,
                reconstruction,
                rcr,
            })
        })
        .collect::<Result<_>>()?;
    let truths: Vec<Tensor> = test.iter().map(|w| w.future.clone()).collect();
    let preds: Vec<Tensor> = results.iter().map(|r| r.forecast.clone()).collect();
    let horizons = opts
        .horizons
        .iter()
        .map(|&h| horizon_metrics(&truths, &preds, h))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let mean_of = |f: &dyn Fn(&WindowResult) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = results.iter().filter_map(f).collect();
        (v.len() == results.len()).then(|| v.iter().sum::<f64>() / n)
    };
    let token_accuracy = mean_of(&|r| r.accuracy);
    let reconstruction_mse = mean_of(&|r| r.reconstruction);
    let longest = horizons.iter().max_by_key(|h| h.horizon).expect("non-empty");
    let rate = match reconstruction_mse {
        Some(r) if longest.mse > 0.0 => Some(reconstruction_rate(r, longest.mse)?),
        _ => None,
    };
    let report = EvalReport {
        domain: domain.to_string(),
        windows: test.len(),
        horizons,
        token_accuracy,
        reconstruction_mse,
        reconstruction_rate: rate,
        rcr: results.iter().map(|r| r.rcr).sum::<f64>() / n,
    };
    report.validate()?;
    Ok(report)
}
