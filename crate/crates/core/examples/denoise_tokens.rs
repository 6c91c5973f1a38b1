//! Masked-token diffusion on a copy task: the future tokens repeat the
//! history. After training, iterative denoising fills the future in a few
//! confidence-ordered rounds.

use onecast::data::synthetic::token_copy;
use onecast::diffusion::{denoise_infer, token_accuracy, PredictorConfig};
use onecast::numerics::init;
use onecast::pipeline::{train_predictor, DomainInfo, ModelConfig, OneCast, TrainConfig};
use onecast::tokenizer::{TokenSequence, TokenizerConfig, CODEBOOK_E, CODEBOOK_M};
use onecast::Tensor;
use rand::SeedableRng;

fn main() -> onecast::Result<()> {
    let (k, d) = (16, 16);
    let cfg = ModelConfig {
        seasonal_hidden: 4,
        tokenizer: TokenizerConfig { codebook_size: k, code_dim: d, hidden: 4, blocks: 1, ..TokenizerConfig::default() },
        predictor: PredictorConfig { hidden: 32, heads: 2, layers: 1, ff_mult: 2 },
        ..ModelConfig::default()
    };
    let mut model = OneCast::new(cfg, vec![DomainInfo { name: "copy".into(), channels: 1 }], 0)?;
    // well separated token embeddings; no tokenizer training here
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    model.store.set(CODEBOOK_E, init::normal(&[k, d], 1.0, &mut rng));
    model.store.set(CODEBOOK_M, Tensor::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 }));

    let n = model.config.history_tokens();
    let train = TrainConfig { diffusion_lr: Some(3e-3), diffusion_epochs: 10, batch_size: 32, lr_decay_every_steps: 1000, ..TrainConfig::default() };
    let report = train_predictor(&mut model, &[("copy".into(), token_copy(600, n, k, 1))], &token_copy(100, n, k, 2), &train)?;
    println!("scheduler {}: best validation loss {:.4}", model.config.scheduler, report.summary.best_validation);

    let predictor = model.predictor()?;
    let layout = model.config.tokenizer.layout();
    let test = token_copy(50, n, k, 3);
    let mut acc = 0.0;
    for pair in &test {
        let (out, _) = denoise_infer(&predictor, &TokenSequence::new(pair.history.clone(), layout), n, 4, None)?;
        acc += token_accuracy(&out.ids, &pair.future)?;
    }
    println!("held-out copy accuracy {:.1}%", 100.0 * acc / test.len() as f64);

    let (out, trace) = denoise_infer(&predictor, &TokenSequence::new(test[0].history.clone(), layout), n, 4, None)?;
    println!("history {:?}\nfilled  {:?}", test[0].history, out.ids);
    for r in &trace.rounds {
        println!("round {}: positions {:?}", r.round, r.positions);
    }
    Ok(())
}
