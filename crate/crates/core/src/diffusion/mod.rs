//! Masked discrete diffusion over trend tokens.
//!
//! Training corrupts future tokens towards an absorbing MASK state at a rate
//! drawn from a [`MaskScheduler`]; the [`TokenPredictor`] learns to recover
//! them from the history tokens and the surviving future tokens. Inference
//! starts from an all-MASK future and fills the most confident positions
//! over a fixed number of rounds.

mod denoise;
mod predictor;
mod scheduler;

pub use denoise::{denoise_infer, DenoiseRound, DenoiseTrace};
pub use predictor::{diffusion_loss, token_accuracy, PredictorConfig, TokenPair, TokenPredictor, MASK_EMBEDDING, PREFIX};
pub use scheduler::{absorbing_marginal, absorbing_transition, corrupt, mask_probability, MaskScheduler};
