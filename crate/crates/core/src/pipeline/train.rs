use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{stream_rng, streams, LossTerms, OneCast, PreparedWindow, StageSummary};
use crate::data::WindowPair;
use crate::diffusion::{corrupt, diffusion_loss, mask_probability, TokenPair, TokenPredictor};
use crate::error::{Error, Result};
use crate::numerics::{step_decay_lr, AdamW, Graph, ParamStore, Tensor};
use crate::tokenizer::{self, TokenSequence, MASK};

/// Parameter name and gradient (or value) pairs.
type NamedGrads = Vec<(String, Tensor)>;

/// Training and validation pairs of one domain.
#[derive(Clone, Debug)]
pub struct DomainData {
    pub domain: String,
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub epoch: usize,
    pub step: usize,
    pub domain: String,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<LossTerms>,
    /// Set on the last step of an epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub val_losses: Vec<f64>,
    pub summary: StageSummary,
    /// Batches dropped because no position was masked.
    pub skipped_batches: usize,
}

impl TrainReport {
    /// One JSON object per optimizer step.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Batches of window indices, alternating over domains: the first batch
/// of every domain, then the second of every domain, and so on. Each
/// domain's windows are shuffled first.
pub fn round_robin_batches<R: Rng>(counts: &[usize], batch_size: usize, rng: &mut R) -> Vec<(usize, Vec<usize>)> {
    let per_domain: Vec<Vec<Vec<usize>>> = counts
        .iter()
        .map(|&n| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let rounds = per_domain.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for (d, batches) in per_domain.iter().enumerate() {
            if let Some(b) = batches.get(r) {
                out.push((d, b.clone()));
            }
        }
    }
    out
}

/// Index of the smallest finite value; the earliest wins ties.
pub fn select_best(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if l.is_finite() && best.is_none_or(|b| l < losses[b]) {
            best = Some(i);
        }
    }
    best
}

fn snapshot(store: &ParamStore) -> NamedGrads {
    store.iter().map(|(n, p)| (n.clone(), p.value.clone())).collect()
}

fn restore(store: &mut ParamStore, snap: NamedGrads) {
    for (n, v) in snap {
        store.set(n, v);
    }
}

/// Averages per-window gradients into the store in window order, so the
/// result does not depend on how the windows were scheduled across threads.
fn apply_grads(store: &mut ParamStore, per_window: &[NamedGrads]) -> Result<()> {
    store.zero_grad();
    let scale = 1.0 / per_window.len() as f64;
    for grads in per_window {
        for (name, g) in grads {
            store.accumulate_grad(name, g, scale)?;
        }
    }
    Ok(())
}

fn prepare_all(model: &OneCast, domain: &str, pairs: &[WindowPair]) -> Result<Vec<PreparedWindow>> {
    pairs.par_iter().map(|p| model.prepare(domain, p)).collect()
}

/// Non-finite intermediate values during training mean the run diverged.
fn as_divergence(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(what) => Error::Divergence { step, what },
        e => e,
    }
}

fn is_stage1_param(name: &str) -> bool {
    name.starts_with("seasonal.") || name.starts_with("tokenizer.")
}

fn is_stage2_param(name: &str) -> bool {
    name.starts_with("predictor.")
}

/// Mean joint loss and per-window gradients of one batch.
pub(crate) fn joint_batch(
    model: &OneCast,
    domain: &str,
    windows: &[&PreparedWindow],
    gamma: f64,
) -> Result<(LossTerms, Vec<NamedGrads>)> {
    let results: Vec<(LossTerms, NamedGrads)> = windows
        .par_iter()
        .map(|w| {
            let mut g = Graph::new();
            let j = model.joint_graph(&mut g, domain, w, gamma)?;
            let grads = g.backward(j.total)?;
            Ok((j.terms(&g), g.param_grads(&grads)))
        })
        .collect::<Result<_>>()?;
    let mut mean = LossTerms::default();
    let n = results.len() as f64;
    let mut grads = Vec::with_capacity(results.len());
    for (t, gr) in results {
        mean.add_scaled(&t, 1.0 / n);
        grads.push(gr);
    }
    Ok((mean, grads))
}

fn mean_joint_loss(model: &OneCast, sets: &[(String, Vec<PreparedWindow>)], gamma: f64) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (domain, windows) in sets {
        let losses: Vec<f64> = windows
            .par_iter()
            .map(|w| Ok(model.joint_terms(domain, w, gamma)?.total))
            .collect::<Result<_>>()?;
        total += losses.iter().sum::<f64>();
        count += losses.len();
    }
    Ok((count > 0).then(|| total / count as f64))
}

fn check_data(data: &[DomainData], model: &OneCast) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset("no training domains".into()));
    }
    for d in data {
        model.domain(&d.domain)?;
        if d.train.is_empty() {
            return Err(Error::Dataset(format!("domain `{}` has no training windows", d.domain)));
        }
    }
    Ok(())
}

/// Joint training of the seasonal predictor and the trend tokenizer.
/// Parameters from the epoch with the lowest validation loss are kept.
pub fn train_stage1(model: &mut OneCast, data: &[DomainData], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_data(data, model)?;
    let train: Vec<(String, Vec<PreparedWindow>)> = data
        .iter()
        .map(|d| Ok((d.domain.clone(), prepare_all(model, &d.domain, &d.train)?)))
        .collect::<Result<_>>()?;
    let val: Vec<(String, Vec<PreparedWindow>)> = data
        .iter()
        .map(|d| Ok((d.domain.clone(), prepare_all(model, &d.domain, &d.val)?)))
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = train.iter().map(|(_, w)| w.len()).collect();
    let mut rng = stream_rng(cfg.seed, streams::SHUFFLE_JOINT);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, NamedGrads)> = None;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for (d, idx) in round_robin_batches(&counts, cfg.batch_size, &mut rng) {
            let (domain, windows) = &train[d];
            let batch: Vec<&PreparedWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let (terms, grads) = joint_batch(model, domain, &batch, cfg.gamma).map_err(|e| as_divergence(e, step))?;
            if !terms.total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: "joint loss".into(),
                });
            }
            apply_grads(&mut model.store, &grads)?;
            let lr = step_decay_lr(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every_steps, step);
            opt.step(&mut model.store, lr, is_stage1_param);
            report.steps.push(StepRecord {
                stage: "joint".into(),
                epoch,
                step,
                domain: domain.clone(),
                lr,
                loss: terms.total,
                terms: Some(terms),
                val_loss: None,
            });
            step += 1;
            epoch_loss += terms.total;
            epoch_batches += 1;
        }
        let v = mean_joint_loss(model, &val, cfg.gamma)
            .map_err(|e| as_divergence(e, step))?
            .unwrap_or(epoch_loss / epoch_batches as f64);
        if !v.is_finite() {
            return Err(Error::Divergence {
                step,
                what: "validation loss".into(),
            });
        }
        if let Some(last) = report.steps.last_mut() {
            last.val_loss = Some(v);
        }
        report.val_losses.push(v);
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, snapshot(&model.store)));
        }
    }
    let (best_val, best_epoch, snap) = best.expect("at least one epoch");
    restore(&mut model.store, snap);
    model.store.zero_grad();
    report.summary = StageSummary {
        epochs: cfg.epochs,
        steps: step,
        best_epoch,
        best_validation: best_val,
    };
    model.metadata.joint = Some(report.summary.clone());
    Ok(report)
}

/// Tokenizes every window of every domain with the frozen tokenizer.
pub fn tokenize_windows(model: &OneCast, domain: &str, pairs: &[WindowPair]) -> Result<Vec<TokenPair>> {
    pairs
        .par_iter()
        .map(|p| model.tokenize_pair(domain, &model.prepare(domain, p)?))
        .collect()
}

/// Corrupted predictor input, targets and mask flags for one pair.
fn corrupted_example<R: Rng>(model: &OneCast, pair: &TokenPair, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>, Vec<bool>)> {
    let t: f64 = rng.random();
    let p = mask_probability(model.config.scheduler, t)?;
    let layout = model.config.tokenizer.layout();
    let future = corrupt(&TokenSequence::new(pair.future.clone(), layout), p, rng)?;
    let input: Vec<usize> = pair.history.iter().copied().chain(future.ids.iter().copied()).collect();
    let targets: Vec<usize> = pair.history.iter().chain(&pair.future).copied().collect();
    let masked: Vec<bool> = input.iter().map(|&i| i == MASK).collect();
    Ok((input, targets, masked))
}

/// Per-window RNG for corruption: depends only on the seed, the epoch and
/// the window's position, never on thread scheduling.
fn window_rng(seed: u64, stream: u64, epoch: usize, domain: usize, index: usize) -> rand_chacha::ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((epoch as u64) << 40 ^ (domain as u64) << 32 ^ index as u64);
    stream_rng(mixed, stream)
}

fn predictor_example_loss(predictor: &TokenPredictor<'_>, input: &[usize], targets: &[usize], masked: &[bool]) -> Result<(f64, NamedGrads)> {
    let mut g = Graph::new();
    let logits = predictor.forward(&mut g, input)?;
    let loss = diffusion_loss(&mut g, logits, targets, masked)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), g.param_grads(&grads)))
}

fn predictor_val_loss(model: &OneCast, val: &[TokenPair], seed: u64) -> Result<Option<f64>> {
    let predictor = model.predictor()?;
    let losses: Vec<Option<f64>> = val
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = window_rng(seed, streams::CORRUPT_VAL, 0, 0, i);
            let (input, targets, masked) = corrupted_example(model, pair, &mut rng)?;
            if !masked.iter().any(|&m| m) {
                return Ok(None);
            }
            let mut g = Graph::new();
            let logits = predictor.forward(&mut g, &input)?;
            let loss = diffusion_loss(&mut g, logits, &targets, &masked)?;
            Ok(Some(g.value(loss).item()))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = losses.into_iter().flatten().collect();
    Ok((!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64))
}

/// Diffusion training on already tokenized pairs, grouped by domain.
/// The predictor is (re)initialized from the current codebook; nothing
/// outside the predictor changes.
pub fn train_predictor(model: &mut OneCast, train: &[(String, Vec<TokenPair>)], val: &[TokenPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || train.iter().any(|(_, p)| p.is_empty()) {
        return Err(Error::Dataset("every domain needs training token pairs".into()));
    }
    let n_h = model.config.history_tokens();
    let n_f = model.config.future_tokens();
    let k = model.config.tokenizer.codebook_size;
    for pair in train.iter().flat_map(|(_, p)| p).chain(val) {
        if pair.history.len() != n_h || pair.future.len() != n_f {
            return Err(Error::Config(format!(
                "token pair lengths {}/{} do not match model {n_h}/{n_f}",
                pair.history.len(),
                pair.future.len()
            )));
        }
        if let Some(&bad) = pair.history.iter().chain(&pair.future).find(|&&t| t >= k) {
            return Err(Error::Vocabulary { id: bad, size: k });
        }
    }
    model.init_predictor(cfg.seed)?;
    if cfg.token_min_fraction > 0.0 {
        let mut counts = vec![0usize; k];
        for t in train.iter().flat_map(|(_, p)| p).flat_map(|p| p.history.iter().chain(&p.future)) {
            counts[*t] += 1;
        }
        model.metadata.vocabulary_mask = Some(tokenizer::abandon_rare_tokens(&counts, cfg.token_min_fraction));
    } else {
        model.metadata.vocabulary_mask = None;
    }
    let counts: Vec<usize> = train.iter().map(|(_, p)| p.len()).collect();
    let mut rng = stream_rng(cfg.seed, streams::SHUFFLE_DIFFUSION);
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, usize, NamedGrads)> = None;
    let mut step = 0usize;
    let lr_base = cfg.stage2_lr();
    for epoch in 1..=cfg.diffusion_epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for (d, idx) in round_robin_batches(&counts, cfg.batch_size, &mut rng) {
            let results: Vec<Option<(f64, NamedGrads)>> = {
                let predictor = model.predictor()?;
                let model_ref = &*model;
                idx.par_iter()
                    .map(|&i| {
                        let mut wrng = window_rng(cfg.seed, streams::CORRUPT, epoch, d, i);
                        let (input, targets, masked) = corrupted_example(model_ref, &train[d].1[i], &mut wrng)?;
                        if !masked.iter().any(|&m| m) {
                            return Ok(None);
                        }
                        predictor_example_loss(&predictor, &input, &targets, &masked).map(Some)
                    })
                    .collect::<Result<_>>()
                    .map_err(|e| as_divergence(e, step))?
            };
            let kept: Vec<(f64, NamedGrads)> = results.into_iter().flatten().collect();
            if kept.is_empty() {
                report.skipped_batches += 1;
                continue;
            }
            let loss = kept.iter().map(|(l, _)| l).sum::<f64>() / kept.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: "diffusion loss".into(),
                });
            }
            let grads: Vec<NamedGrads> = kept.into_iter().map(|(_, g)| g).collect();
            apply_grads(&mut model.store, &grads)?;
            let lr = step_decay_lr(lr_base, cfg.lr_decay_factor, cfg.lr_decay_every_steps, step);
            opt.step(&mut model.store, lr, is_stage2_param);
            report.steps.push(StepRecord {
                stage: "diffusion".into(),
                epoch,
                step,
                domain: train[d].0.clone(),
                lr,
                loss,
                terms: None,
                val_loss: None,
            });
            step += 1;
            epoch_loss += loss;
            epoch_batches += 1;
        }
        let train_mean = if epoch_batches > 0 { epoch_loss / epoch_batches as f64 } else { f64::INFINITY };
        let v = predictor_val_loss(model, val, cfg.seed)?.unwrap_or(train_mean);
        if let Some(last) = report.steps.last_mut() {
            last.val_loss = Some(v);
        }
        report.val_losses.push(v);
        if v.is_finite() && best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, snapshot(&model.store)));
        }
    }
    let Some((best_val, best_epoch, snap)) = best else {
        return Err(Error::DegenerateBatch("no diffusion step produced a usable loss".into()));
    };
    restore(&mut model.store, snap);
    model.store.zero_grad();
    report.summary = StageSummary {
        epochs: cfg.diffusion_epochs,
        steps: step,
        best_epoch,
        best_validation: best_val,
    };
    model.metadata.diffusion = Some(report.summary.clone());
    Ok(report)
}

/// Diffusion training on window pairs tokenized by the frozen tokenizer.
pub fn train_stage2(model: &mut OneCast, data: &[DomainData], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_data(data, model)?;
    if !model.config.variant.has_trend() {
        return Err(Error::Config("seasonal-only models have no diffusion stage".into()));
    }
    let frozen = model.store.clone();
    let mut train = Vec::with_capacity(data.len());
    let mut val = Vec::new();
    for d in data {
        train.push((d.domain.clone(), tokenize_windows(model, &d.domain, &d.train)?));
        val.extend(tokenize_windows(model, &d.domain, &d.val)?);
    }
    let report = train_predictor(model, &train, &val, cfg)?;
    for (name, p) in frozen.iter() {
        if !is_stage2_param(name) && model.store.value(name)? != &p.value {
            return Err(Error::Numeric(format!("diffusion stage modified `{name}`")));
        }
    }
    Ok(report)
}
