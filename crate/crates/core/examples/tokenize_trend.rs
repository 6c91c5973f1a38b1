//! Fit the trend tokenizer during a short joint stage, then turn history
//! trends into token ids and decode them back.

use onecast::data::synthetic::{sin_ramp, SinRampSpec};
use onecast::data::{make_windows, SplitFractions};
use onecast::pipeline::{tokenize_windows, train_stage1, DomainData, DomainInfo, ModelConfig, OneCast, TrainConfig};
use onecast::tokenizer::TokenizerConfig;

fn main() -> onecast::Result<()> {
    let series = sin_ramp(&SinRampSpec { len: 2000, ..SinRampSpec::default() });
    let w = make_windows(&series, 96, 96, 8, &SplitFractions::default())?;
    let cfg = ModelConfig {
        seasonal_hidden: 16,
        tokenizer: TokenizerConfig { codebook_size: 16, code_dim: 8, hidden: 8, blocks: 1, ..TokenizerConfig::default() },
        ..ModelConfig::default()
    };
    let mut model = OneCast::new(cfg, vec![DomainInfo { name: "ramp".into(), channels: 2 }], 0)?;
    let data = vec![DomainData { domain: "ramp".into(), train: w.train.clone(), val: w.val.clone() }];
    let train = TrainConfig { lr: 2e-3, epochs: 8, batch_size: 16, ..TrainConfig::default() };
    let report = train_stage1(&mut model, &data, &train)?;
    println!("joint stage: {} steps, best validation {:.4}", report.summary.steps, report.summary.best_validation);

    let pairs = tokenize_windows(&model, "ramp", &w.test[..4])?;
    for (p, pair) in w.test.iter().zip(&pairs) {
        let (trend, rec) = model.reconstruct_history("ramp", &p.history)?;
        let (mse, _) = onecast::data::mse_mae(&trend, &rec)?;
        println!("window at {:>4}: history {:?} future {:?}  reconstruction mse {mse:.4}", p.start, pair.history, pair.future);
    }

    let all = tokenize_windows(&model, "ramp", &w.train)?;
    let mut counts = vec![0usize; 16];
    for t in all.iter().flat_map(|p| p.history.iter().chain(&p.future)) {
        counts[*t] += 1;
    }
    println!("code usage over the training split: {counts:?}");
    Ok(())
}
