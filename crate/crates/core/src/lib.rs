//! Cross-domain time series forecasting by structured decomposition.
//!
//! A window is instance-normalized and split into a moving-average trend and
//! a seasonal remainder. The seasonal part is forecast as a weighted sum of
//! fixed sinusoidal bases whose weights come from a small MLP. The trend part
//! is tokenized by a convolutional vector-quantized autoencoder with two
//! decoders (history reconstruction and future decoding under history
//! statistics), and future trend tokens are generated by a masked
//! discrete-diffusion transformer that restores the most confident positions
//! first. Both parts are summed and denormalized.
//!
//! Module map:
//!
//! - [`numerics`]: tensors, reverse-mode graph, layers, gradient checks
//! - [`decomposition`]: instance normalization and moving-average split
//! - [`seasonal`]: periodic basis bank and weight prediction
//! - [`tokenizer`]: trend encoder, transformed codebook, dual decoders
//! - [`diffusion`]: mask schedulers, corruption, token predictor, denoising
//! - [`pipeline`]: model, two-stage training, checkpoints, forecasting
//! - [`data`]: CSV ingestion, windows, metrics, synthetic corpora, reports
//! - [`cli`]: the command surface used by the `onecast` binary
//! - [`selfcheck`]: numeric self-tests runnable from the binary

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod decomposition;
pub mod diffusion;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod seasonal;
pub mod selfcheck;
pub mod tokenizer;

pub use error::{Error, Result};
pub use numerics::Tensor;
