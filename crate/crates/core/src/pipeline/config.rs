use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decomposition::{DEFAULT_EPSILON, DEFAULT_MA_WINDOW};
use crate::diffusion::{MaskScheduler, PredictorConfig};
use crate::error::{Error, Result};
use crate::tokenizer::TokenizerConfig;

/// Which trend path the model uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// History decoder for reconstruction, separate future decoder.
    #[default]
    Dual,
    /// The history decoder also decodes future tokens; future tokens are
    /// trained to reconstruct the future under its own statistics.
    SingleDecoder,
    /// No trend branch; the forecast is the seasonal part alone.
    SeasonalOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dual, Variant::SingleDecoder, Variant::SeasonalOnly];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dual => "dual",
            Variant::SingleDecoder => "single-decoder",
            Variant::SeasonalOnly => "seasonal-only",
        }
    }

    pub fn has_trend(self) -> bool {
        self != Variant::SeasonalOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

/// Architecture and preprocessing; fixed for the life of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub history_len: usize,
    pub horizon: usize,
    pub ma_window: usize,
    pub epsilon: f64,
    /// Natural periods (steps) expanded into the default harmonic bank.
    pub natural_periods: Vec<f64>,
    /// Explicit basis periods; replaces the harmonic bank when set.
    pub basis_periods: Option<Vec<f64>>,
    pub seasonal_hidden: usize,
    pub tokenizer: TokenizerConfig,
    pub predictor: PredictorConfig,
    pub scheduler: MaskScheduler,
    pub inference_steps: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history_len: 96,
            horizon: 96,
            ma_window: DEFAULT_MA_WINDOW,
            epsilon: DEFAULT_EPSILON,
            natural_periods: vec![24.0],
            basis_periods: None,
            seasonal_hidden: 64,
            tokenizer: TokenizerConfig::default(),
            predictor: PredictorConfig::default(),
            scheduler: MaskScheduler::Cosine,
            inference_steps: 4,
            variant: Variant::Dual,
        }
    }
}

impl ModelConfig {
    /// Tokens per future window.
    pub fn future_tokens(&self) -> usize {
        self.tokenizer.layout().token_count(self.horizon)
    }

    pub fn history_tokens(&self) -> usize {
        self.tokenizer.layout().token_count(self.history_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len < 2 || self.horizon == 0 {
            return Err(Error::Config("history must span 2+ steps and horizon 1+".into()));
        }
        if self.ma_window == 0 {
            return Err(Error::Config("moving-average window must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.seasonal_hidden == 0 {
            return Err(Error::Config("seasonal hidden width must be positive".into()));
        }
        if self.inference_steps == 0 {
            return Err(Error::Config("inference steps must be at least 1".into()));
        }
        if self.variant.has_trend() {
            self.tokenizer.validate()?;
            self.predictor.validate()?;
            let layout = self.tokenizer.layout();
            layout.check_len(self.history_len)?;
            layout.check_len(self.horizon)?;
            if self.inference_steps > self.future_tokens() {
                return Err(Error::Config(format!(
                    "{} inference steps exceed {} future tokens",
                    self.inference_steps,
                    self.future_tokens()
                )));
            }
        }
        Ok(())
    }
}

/// Which training stages to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Seasonal predictor and trend tokenizer.
    Joint,
    /// Token predictor on a frozen tokenizer.
    Diffusion,
    #[default]
    Both,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Stage::Joint),
            "diffusion" => Ok(Stage::Diffusion),
            "both" => Ok(Stage::Both),
            _ => Err(Error::Config(format!("unknown stage `{s}`"))),
        }
    }
}

/// Optimization settings shared by both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_steps: usize,
    /// Joint-stage epochs.
    pub epochs: usize,
    pub diffusion_epochs: usize,
    /// Learning rate for the diffusion stage; `lr` when unset.
    pub diffusion_lr: Option<f64>,
    /// Weight of the trend tokenizer loss in the joint objective.
    pub gamma: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub stage: Stage,
    /// Minimum share of training tokens a code needs to stay in the
    /// predictor's output vocabulary; 0 keeps all codes.
    pub token_min_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-5,
            lr_decay_factor: 0.99,
            lr_decay_every_steps: 300,
            epochs: 10,
            diffusion_epochs: 10,
            diffusion_lr: None,
            gamma: 1.0,
            seed: 0,
            batch_size: 32,
            stage: Stage::Both,
            token_min_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if !lr_ok(self.lr) || self.diffusion_lr.is_some_and(|l| !lr_ok(l)) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.diffusion_epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("gamma must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("weight decay must be >= 0 and decay factor > 0".into()));
        }
        if !(0.0..1.0).contains(&self.token_min_fraction) {
            return Err(Error::Config("token_min_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn stage2_lr(&self) -> f64 {
        self.diffusion_lr.unwrap_or(self.lr)
    }
}
