mod common;

use onecast::data::synthetic::{pure_sine, sin_ramp, SinRampSpec};
use onecast::data::WindowPair;
use onecast::diffusion::PredictorConfig;
use onecast::pipeline::{
    evaluate, tokenize_windows, train_stage1, train_stage2, DomainData, DomainInfo, EvalOptions, ModelConfig, OneCast,
    TrainConfig, Variant,
};
use onecast::tokenizer::TokenizerConfig;
use onecast::Tensor;

fn small_tokenizer(k: usize) -> TokenizerConfig {
    TokenizerConfig { codebook_size: k, code_dim: 8, hidden: 8, blocks: 1, ..TokenizerConfig::default() }
}

fn fast_train(epochs: usize) -> TrainConfig {
    TrainConfig { lr: 2e-3, epochs, diffusion_epochs: 2, batch_size: 16, lr_decay_every_steps: 100, ..TrainConfig::default() }
}

fn data(domain: &str, w: &onecast::data::SplitWindows) -> DomainData {
    DomainData { domain: domain.into(), train: w.train.clone(), val: w.val.clone() }
}

#[test]
fn seasonal_stage_learns_a_pure_sine() {
    let series = pure_sine(1600, 1, 24.0, 1.0);
    let w = common::windows(&series, 5);
    let cfg = ModelConfig { seasonal_hidden: 32, variant: Variant::SeasonalOnly, ..ModelConfig::default() };
    let mut m = OneCast::new(cfg, vec![DomainInfo { name: "s".into(), channels: 1 }], 0).unwrap();
    train_stage1(&mut m, &[data("s", &w)], &fast_train(15)).unwrap();
    let r = evaluate(&m, "s", &w.test, &EvalOptions { horizons: vec![96], steps: None, truth_as_forecast: false }).unwrap();
    assert!(r.horizons[0].mse < 0.05, "seasonal mse {}", r.horizons[0].mse);
}

#[test]
fn history_decoder_reconstructs_ramps_and_uses_several_codes() {
    let series = sin_ramp(&SinRampSpec { seed: 3, len: 2000, ..SinRampSpec::default() });
    let w = common::windows(&series, 8);
    let cfg = ModelConfig {
        seasonal_hidden: 16,
        tokenizer: small_tokenizer(16),
        predictor: PredictorConfig { hidden: 8, heads: 2, layers: 1, ff_mult: 2 },
        ..ModelConfig::default()
    };
    let mut m = OneCast::new(cfg, vec![DomainInfo { name: "s".into(), channels: 2 }], 1).unwrap();
    train_stage1(&mut m, &[data("s", &w)], &fast_train(10)).unwrap();

    let mut mse = 0.0;
    for p in &w.test {
        let (trend, rec) = m.reconstruct_history("s", &p.history).unwrap();
        let dec = onecast::decomposition::decompose_values(&p.history, m.config.epsilon, m.config.ma_window).unwrap();
        let scale = dec.stats.scale();
        let d = Tensor::from_fn(96, 2, |t, c| (trend.get(t, c) - rec.get(t, c)) / scale[c]);
        mse += d.data().iter().map(|v| v * v).sum::<f64>() / d.numel() as f64;
    }
    mse /= w.test.len() as f64;
    assert!(mse < 0.05, "normalized reconstruction mse {mse}");

    let pairs = tokenize_windows(&m, "s", &w.train).unwrap();
    let mut used: Vec<usize> = pairs.iter().flat_map(|p| p.history.iter().chain(&p.future).copied()).collect();
    used.sort_unstable();
    used.dedup();
    assert!(used.len() >= 2, "codebook collapsed to {used:?}");
}

#[test]
fn domains_with_different_channel_counts_share_one_model() {
    let one = sin_ramp(&SinRampSpec { seed: 4, len: 1200, channels: 1, ..SinRampSpec::default() });
    let three = sin_ramp(&SinRampSpec { seed: 5, len: 1200, channels: 3, ..SinRampSpec::default() });
    let (w1, w3) = (common::windows(&one, 12), common::windows(&three, 12));
    let cfg = ModelConfig {
        seasonal_hidden: 8,
        tokenizer: small_tokenizer(8),
        predictor: PredictorConfig { hidden: 8, heads: 2, layers: 1, ff_mult: 2 },
        ..ModelConfig::default()
    };
    let domains = vec![DomainInfo { name: "a".into(), channels: 1 }, DomainInfo { name: "b".into(), channels: 3 }];
    let mut m = OneCast::new(cfg, domains, 2).unwrap();
    let all = [data("a", &w1), data("b", &w3)];
    let r1 = train_stage1(&mut m, &all, &fast_train(2)).unwrap();
    assert!(r1.steps.iter().any(|s| s.domain == "a") && r1.steps.iter().any(|s| s.domain == "b"));
    train_stage2(&mut m, &all, &fast_train(2)).unwrap();
    let fa = m.forecast("a", &w1.test[0].history, None).unwrap();
    let fb = m.forecast("b", &w3.test[0].history, None).unwrap();
    assert_eq!(fa.values.shape(), &[96, 1]);
    assert_eq!(fb.values.shape(), &[96, 3]);
    // token count does not depend on the channel count
    assert_eq!(fa.future_tokens.unwrap().len(), fb.future_tokens.unwrap().len());
    assert!(m.forecast("b", &w1.test[0].history, None).is_err());
}

#[test]
fn evaluation_reports_each_horizon_and_zero_for_truth() {
    let series = sin_ramp(&SinRampSpec { seed: 6, len: 1200, ..SinRampSpec::default() });
    let w = common::windows(&series, 12);
    let cfg = ModelConfig {
        seasonal_hidden: 8,
        tokenizer: small_tokenizer(8),
        predictor: PredictorConfig { hidden: 8, heads: 2, layers: 1, ff_mult: 2 },
        ..ModelConfig::default()
    };
    let m = common::train_model(cfg, "s", &w, &fast_train(2), 3);
    let test: Vec<WindowPair> = w.test.clone();
    let opts = EvalOptions { horizons: vec![24, 48, 96], steps: Some(2), truth_as_forecast: false };
    let r = evaluate(&m, "s", &test, &opts).unwrap();
    assert_eq!(r.horizons.iter().map(|h| h.horizon).collect::<Vec<_>>(), vec![24, 48, 96]);
    let acc = r.token_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(r.reconstruction_mse.unwrap() >= 0.0);

    let truth = evaluate(&m, "s", &test, &EvalOptions { truth_as_forecast: true, ..opts.clone() }).unwrap();
    for h in &truth.horizons {
        assert_eq!((h.mse, h.mae, h.amad), (0.0, 0.0, 0.0));
    }
    assert!(evaluate(&m, "s", &test, &EvalOptions { horizons: vec![97], ..opts }).is_err());
}
