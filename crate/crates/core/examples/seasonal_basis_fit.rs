//! Train a seasonal-only model on a clean 24-step sinusoid and read back
//! the weight it assigns to the period-24 sine.

use onecast::data::synthetic::pure_sine;
use onecast::data::{make_windows, SplitFractions};
use onecast::pipeline::{train_stage1, DomainData, DomainInfo, ModelConfig, OneCast, TrainConfig, Variant};

fn main() -> onecast::Result<()> {
    let series = pure_sine(2400, 1, 24.0, 1.0);
    // windows start on whole periods, so the sine is in phase with the basis
    let windows = make_windows(&series, 96, 96, 24, &SplitFractions::default())?;
    let cfg = ModelConfig {
        history_len: 96,
        horizon: 96,
        natural_periods: vec![24.0],
        seasonal_hidden: 32,
        variant: Variant::SeasonalOnly,
        ..ModelConfig::default()
    };
    let mut model = OneCast::new(cfg, vec![DomainInfo { name: "sine".into(), channels: 1 }], 0)?;
    let data = vec![DomainData { domain: "sine".into(), train: windows.train.clone(), val: windows.val.clone() }];
    let train = TrainConfig { lr: 2e-3, epochs: 40, batch_size: 8, seed: 0, ..TrainConfig::default() };
    let report = train_stage1(&mut model, &data, &train)?;
    println!("best validation loss {:.2e}", report.summary.best_validation);

    let periods = model.basis.periods();
    let idx = periods.iter().position(|p| (p - 24.0).abs() < 1e-9).expect("period 24 in the bank");
    for w in windows.test.iter().take(3) {
        let weights = model.seasonal_weights(&w.history)?;
        println!("sin weight at period 24: {:.4}", weights.sin.get(idx, 0));
    }
    Ok(())
}
