//! Desk-scale settings shared by the integration tests.
#![allow(dead_code)]

use onecast::data::{make_windows, SplitFractions, SplitWindows};
use onecast::diffusion::PredictorConfig;
use onecast::pipeline::{
    train_stage1, train_stage2, DomainData, DomainInfo, ModelConfig, OneCast, TrainConfig, Variant,
};
use onecast::tokenizer::TokenizerConfig;
use onecast::Tensor;

/// The tokenizer needs a wide receptive field: its conv decoders carry no
/// position signal, so telling a rising window from a falling one takes
/// context.
pub fn desk_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        history_len: 96,
        horizon: 96,
        seasonal_hidden: 32,
        tokenizer: TokenizerConfig {
            codebook_size: 32,
            code_dim: 16,
            hidden: 16,
            patch_len: 16,
            wave_len: 8,
            blocks: 2,
            kernel: 5,
            ..TokenizerConfig::default()
        },
        predictor: PredictorConfig { hidden: 32, heads: 2, layers: 1, ff_mult: 2 },
        inference_steps: 4,
        variant,
        ..ModelConfig::default()
    }
}

pub fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        epochs: 20,
        diffusion_epochs: 10,
        batch_size: 16,
        lr_decay_every_steps: 100,
        seed,
        ..TrainConfig::default()
    }
}

pub fn windows(series: &Tensor, stride: usize) -> SplitWindows {
    make_windows(series, 96, 96, stride, &SplitFractions::default()).unwrap()
}

/// Both stages on one domain.
pub fn train_model(cfg: ModelConfig, domain: &str, w: &SplitWindows, train: &TrainConfig, seed: u64) -> OneCast {
    let channels = w.train[0].history.cols();
    let mut m = OneCast::new(cfg, vec![DomainInfo { name: domain.into(), channels }], seed).unwrap();
    let data = vec![DomainData { domain: domain.into(), train: w.train.clone(), val: w.val.clone() }];
    train_stage1(&mut m, &data, train).unwrap();
    if m.config.variant.has_trend() {
        train_stage2(&mut m, &data, train).unwrap();
    }
    m
}
