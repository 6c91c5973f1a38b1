use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use crate::data::WindowPair;
use crate::decomposition::{decompose_values, denormalize, DecomposedWindow, NormStats};
use crate::diffusion::{denoise_infer, DenoiseTrace, TokenPair, TokenPredictor, MASK_EMBEDDING};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::seasonal::{self, SeasonalBasis, SeasonalWeights};
use crate::tokenizer::{self, Decoder, TokenSequence};

/// A domain the model has adapters for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub name: String,
    pub channels: usize,
}

/// Outcome of one training stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub epochs: usize,
    pub steps: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub joint: Option<StageSummary>,
    pub diffusion: Option<StageSummary>,
    /// Codes the predictor may emit; all codes when absent.
    pub vocabulary_mask: Option<Vec<bool>>,
}

/// Random streams derived from the run seed, one per consumer.
pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const PREDICTOR_INIT: u64 = 2;
    pub const SHUFFLE_JOINT: u64 = 3;
    pub const SHUFFLE_DIFFUSION: u64 = 4;
    pub const CORRUPT: u64 = 5;
    pub const CORRUPT_VAL: u64 = 6;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The forecasting model: configuration, seasonal bank, domain adapters
/// and every learned parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OneCast {
    pub config: ModelConfig,
    pub basis: SeasonalBasis,
    pub domains: Vec<DomainInfo>,
    pub store: ParamStore,
    pub metadata: TrainingMetadata,
}

/// A window pair normalized and decomposed once, reused across epochs.
#[derive(Clone, Debug)]
pub struct PreparedWindow {
    pub history: DecomposedWindow,
    pub future: DecomposedWindow,
    pub future_raw: Tensor,
}

/// Scalar loss terms of one window, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub forecast: f64,
    pub history_reconstruction: f64,
    pub future_trend: f64,
    pub codebook: f64,
}

impl LossTerms {
    pub fn add_scaled(&mut self, o: &LossTerms, s: f64) {
        self.total += s * o.total;
        self.forecast += s * o.forecast;
        self.history_reconstruction += s * o.history_reconstruction;
        self.future_trend += s * o.future_trend;
        self.codebook += s * o.codebook;
    }
}

/// Graph nodes of the joint objective.
pub struct JointGraph {
    pub total: Var,
    /// Forecast error in raw units.
    pub forecast: Var,
    /// History trend reconstruction.
    pub history_reconstruction: Option<Var>,
    /// Future trend decoding.
    pub future_trend: Option<Var>,
    pub codebook: Option<Var>,
}

impl JointGraph {
    pub fn terms(&self, g: &Graph) -> LossTerms {
        let v = |x: Option<Var>| x.map(|x| g.value(x).item()).unwrap_or(0.0);
        LossTerms {
            total: g.value(self.total).item(),
            forecast: g.value(self.forecast).item(),
            history_reconstruction: v(self.history_reconstruction),
            future_trend: v(self.future_trend),
            codebook: v(self.codebook),
        }
    }
}

/// Everything produced by one forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    /// `[L_f × C]` in raw units.
    pub values: Tensor,
    /// Normalized seasonal and trend parts, in history units.
    pub season: Tensor,
    pub trend: Tensor,
    pub history_tokens: Option<TokenSequence>,
    pub future_tokens: Option<TokenSequence>,
    pub trace: Option<DenoiseTrace>,
}

/// `x · sqrt(σ² + ε) + μ` inside a graph.
fn denorm_graph(g: &mut Graph, x: Var, stats: &NormStats) -> Result<Var> {
    let scale = g.constant(Tensor::vector(stats.scale()));
    let mu = g.constant(Tensor::vector(stats.mu.clone()));
    let y = g.mul_row(x, scale)?;
    g.add_row(y, mu)
}

impl OneCast {
    pub fn new(config: ModelConfig, domains: Vec<DomainInfo>, seed: u64) -> Result<Self> {
        config.validate()?;
        if domains.is_empty() {
            return Err(Error::Dataset("model needs at least one domain".into()));
        }
        for (i, d) in domains.iter().enumerate() {
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!("invalid domain name `{}`", d.name)));
            }
            if domains[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate domain `{}`", d.name)));
            }
        }
        let basis = match &config.basis_periods {
            Some(p) => seasonal::build_basis(p)?,
            None => seasonal::default_bank(&config.natural_periods)?,
        };
        basis.check_independent(config.history_len)?;
        let mut rng = stream_rng(seed, streams::INIT);
        let mut store = ParamStore::new();
        seasonal::init_params(&mut store, config.history_len, config.seasonal_hidden, basis.len(), &mut rng)?;
        if config.variant.has_trend() {
            tokenizer::init_params(&mut store, &config.tokenizer, &mut rng)?;
            for d in &domains {
                tokenizer::add_domain(&mut store, &config.tokenizer, &d.name, d.channels, &mut rng)?;
            }
        }
        Ok(Self {
            config,
            basis,
            domains,
            store,
            metadata: TrainingMetadata {
                seed,
                ..TrainingMetadata::default()
            },
        })
    }

    pub fn domain(&self, name: &str) -> Result<&DomainInfo> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("model has no domain `{name}`")))
    }

    pub fn has_predictor(&self) -> bool {
        self.store.contains(MASK_EMBEDDING)
    }

    /// Adds the token predictor on top of the current codebook. Existing
    /// predictor parameters are replaced.
    pub fn init_predictor(&mut self, seed: u64) -> Result<()> {
        if !self.config.variant.has_trend() {
            return Err(Error::Config("seasonal-only models have no token predictor".into()));
        }
        let names: Vec<String> = self.store.with_prefix(crate::diffusion::PREFIX).map(|(n, _)| n.clone()).collect();
        if !names.is_empty() {
            let mut kept = ParamStore::new();
            for (n, p) in self.store.iter() {
                if !names.contains(n) {
                    kept.insert(n.clone(), p.value.clone())?;
                }
            }
            self.store = kept;
        }
        let mut rng = stream_rng(seed, streams::PREDICTOR_INIT);
        let t = &self.config.tokenizer;
        self.config
            .predictor
            .init_params(&mut self.store, t.code_dim, t.codebook_size, &mut rng)?;
        TokenPredictor::init_mask_embedding(&mut self.store)
    }

    pub fn predictor(&self) -> Result<TokenPredictor<'_>> {
        if !self.has_predictor() {
            return Err(Error::Checkpoint("model has no trained token predictor".into()));
        }
        TokenPredictor::new(&self.store, &self.config.predictor)
    }

    fn check_window(&self, domain: &str, x: &Tensor, len: usize, what: &str) -> Result<()> {
        let info = self.domain(domain)?;
        let (l, c) = x.expect_2d("forecast")?;
        if l != len || c != info.channels {
            return Err(Error::Config(format!(
                "{what} window is {l}×{c}, model expects {len}×{} for domain `{domain}`",
                info.channels
            )));
        }
        Ok(())
    }

    pub fn prepare(&self, domain: &str, pair: &WindowPair) -> Result<PreparedWindow> {
        let cfg = &self.config;
        self.check_window(domain, &pair.history, cfg.history_len, "history")?;
        self.check_window(domain, &pair.future, cfg.horizon, "future")?;
        Ok(PreparedWindow {
            history: decompose_values(&pair.history, cfg.epsilon, cfg.ma_window)?,
            future: decompose_values(&pair.future, cfg.epsilon, cfg.ma_window)?,
            future_raw: pair.future.clone(),
        })
    }

    /// Joint objective for one window: forecast error plus `gamma` times
    /// the tokenizer terms.
    ///
    /// All terms are mean squared errors in raw units. The future decoder's
    /// input is detached, so the future-trend and forecast errors never
    /// reach the codebook, its transform or the encoder through it.
    pub fn joint_graph(&self, g: &mut Graph, domain: &str, w: &PreparedWindow, gamma: f64) -> Result<JointGraph> {
        let cfg = &self.config;
        let (sh, sf) = (&w.history.stats, &w.future.stats);
        let season_h = g.constant(w.history.season.clone());
        let weights = seasonal::predict_weights_graph(g, &self.store, season_h)?;
        let season_f = seasonal::forecast_graph(g, &self.basis, weights, cfg.history_len, cfg.horizon)?;
        let target = g.constant(w.future_raw.clone());

        if !cfg.variant.has_trend() {
            let pred = denorm_graph(g, season_f, sh)?;
            let forecast = g.mse(target, pred)?;
            return Ok(JointGraph {
                total: forecast,
                forecast,
                history_reconstruction: None,
                future_trend: None,
                codebook: None,
            });
        }

        let tcfg = &cfg.tokenizer;
        let trend_h = g.constant(w.history.trend.clone());
        let trend_f = g.constant(w.future.trend.clone());
        let e_hat = tokenizer::transformed_codebook(g, &self.store)?;
        let z_h = tokenizer::encode(g, &self.store, tcfg, domain, trend_h)?;
        let q_h = tokenizer::quantize(g, z_h, e_hat, tcfg.beta)?;
        let z_f = tokenizer::encode(g, &self.store, tcfg, domain, trend_f)?;
        let q_f = tokenizer::quantize(g, z_f, e_hat, tcfg.beta)?;

        let rec_h = tokenizer::decode_history(g, &self.store, tcfg, domain, q_h.z_q)?;
        let rec_h_raw = denorm_graph(g, rec_h, sh)?;
        let trend_h_raw = g.constant(denormalize(&w.history.trend, sh)?);
        let history_loss = g.mse(trend_h_raw, rec_h_raw)?;

        let trend_f_raw = g.constant(denormalize(&w.future.trend, sf)?);
        let (future_loss, future_trend) = match cfg.variant {
            Variant::Dual => {
                let dec = tokenizer::decode_future(g, &self.store, tcfg, domain, q_f.z_q)?;
                let raw = denorm_graph(g, dec, sh)?;
                (g.mse(trend_f_raw, raw)?, dec)
            }
            Variant::SingleDecoder => {
                let dec = tokenizer::decode_history(g, &self.store, tcfg, domain, q_f.z_q)?;
                let raw = denorm_graph(g, dec, sf)?;
                (g.mse(trend_f_raw, raw)?, dec)
            }
            Variant::SeasonalOnly => unreachable!(),
        };
        let composed = g.add(future_trend, season_f)?;
        let pred = denorm_graph(g, composed, sh)?;
        let forecast = g.mse(target, pred)?;
        let codebook = g.add(q_h.codebook_loss, q_f.codebook_loss)?;
        let trend_loss = tokenizer::trend_tokenizer_loss(g, history_loss, future_loss, codebook)?;
        let total = if gamma == 0.0 {
            forecast
        } else {
            let weighted = g.scale(trend_loss, gamma);
            g.add(forecast, weighted)?
        };
        Ok(JointGraph {
            total,
            forecast,
            history_reconstruction: Some(history_loss),
            future_trend: Some(future_loss),
            codebook: Some(codebook),
        })
    }

    pub fn joint_terms(&self, domain: &str, w: &PreparedWindow, gamma: f64) -> Result<LossTerms> {
        let mut g = Graph::new();
        let j = self.joint_graph(&mut g, domain, w, gamma)?;
        Ok(j.terms(&g))
    }

    /// History and future tokens under the current (frozen) tokenizer.
    pub fn tokenize_pair(&self, domain: &str, w: &PreparedWindow) -> Result<TokenPair> {
        let tcfg = &self.config.tokenizer;
        Ok(TokenPair {
            history: tokenizer::tokenize(&self.store, tcfg, domain, &w.history.trend)?.ids,
            future: tokenizer::tokenize(&self.store, tcfg, domain, &w.future.trend)?.ids,
        })
    }

    fn future_decoder(&self) -> Decoder {
        match self.config.variant {
            Variant::SingleDecoder => Decoder::History,
            _ => Decoder::Future,
        }
    }

    /// Forecast `[L_f × C]` from a raw history window. `steps` overrides
    /// the configured number of denoising rounds.
    pub fn forecast(&self, domain: &str, history: &Tensor, steps: Option<usize>) -> Result<Forecast> {
        let cfg = &self.config;
        self.check_window(domain, history, cfg.history_len, "history")?;
        let dec = decompose_values(history, cfg.epsilon, cfg.ma_window)?;
        let weights = seasonal::predict_weights(&self.store, &dec.season)?;
        let season = seasonal::evaluate_basis(&self.basis, &weights, cfg.history_len, cfg.horizon)?;
        let (trend, history_tokens, future_tokens, trace) = if cfg.variant.has_trend() {
            let predictor = self.predictor()?;
            let tokens_h = tokenizer::tokenize(&self.store, &cfg.tokenizer, domain, &dec.trend)?;
            let steps = steps.unwrap_or(cfg.inference_steps);
            let allowed = self.metadata.vocabulary_mask.as_deref();
            let (tokens_f, trace) = denoise_infer(&predictor, &tokens_h, cfg.future_tokens(), steps, allowed)?;
            let trend = tokenizer::decode_tokens(&self.store, &cfg.tokenizer, self.future_decoder(), domain, &tokens_f)?;
            (trend, Some(tokens_h), Some(tokens_f), Some(trace))
        } else {
            (Tensor::zeros(&[cfg.horizon, history.cols()]), None, None, None)
        };
        let values = denormalize(&trend.zip_map(&season, |a, b| a + b)?, &dec.stats)?;
        if !values.is_finite() {
            return Err(Error::Numeric("forecast is not finite".into()));
        }
        Ok(Forecast {
            values,
            season,
            trend,
            history_tokens,
            future_tokens,
            trace,
        })
    }

    /// Raw-unit history trend and its reconstruction through the history
    /// decoder.
    pub fn reconstruct_history(&self, domain: &str, history: &Tensor) -> Result<(Tensor, Tensor)> {
        let cfg = &self.config;
        if !cfg.variant.has_trend() {
            return Err(Error::Config("seasonal-only models have no tokenizer".into()));
        }
        self.check_window(domain, history, cfg.history_len, "history")?;
        let dec = decompose_values(history, cfg.epsilon, cfg.ma_window)?;
        let tokens = tokenizer::tokenize(&self.store, &cfg.tokenizer, domain, &dec.trend)?;
        let rec = tokenizer::decode_tokens(&self.store, &cfg.tokenizer, Decoder::History, domain, &tokens)?;
        Ok((denormalize(&dec.trend, &dec.stats)?, denormalize(&rec, &dec.stats)?))
    }

    /// Predicted seasonal weights in raw units for one history window.
    pub fn seasonal_weights(&self, history: &Tensor) -> Result<SeasonalWeights> {
        let cfg = &self.config;
        let dec = decompose_values(history, cfg.epsilon, cfg.ma_window)?;
        let w = seasonal::predict_weights(&self.store, &dec.season)?;
        Ok(w.scaled_by_channel(&dec.stats.scale()))
    }
}
