//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the lines always
//! show up in `cargo test` output.

mod common;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use onecast::data::synthetic::{level_shift, pure_sine, sin_ramp, token_copy, LevelShiftSpec, SinRampSpec};
use onecast::data::{mse_mae, token_budget, TokenMethod};
use onecast::diffusion::{corrupt, denoise_infer, mask_probability, token_accuracy, MaskScheduler, PredictorConfig};
use onecast::pipeline::{
    evaluate, repeat_last, train_predictor, train_stage1, DomainData, DomainInfo, EvalOptions, ModelConfig, OneCast,
    TrainConfig, Variant,
};
use onecast::selfcheck::{
    absorbing_oracle, diffusion_gradient_error, joint_gradient_error, op_gradient_error, quantizer_oracle, OP_CASES,
};
use onecast::tokenizer::{TokenSequence, TokenizerConfig, CODEBOOK_E, CODEBOOK_M};
use onecast::Tensor;

const GRAD_SEEDS: u64 = 50;
const GRAD_REL_TOL: f64 = 1e-4;
const QUANTIZER_INSTANCES: usize = 1000;
const CORRUPT_POSITIONS: usize = 10_000;
const CORRUPT_SIGMAS: f64 = 3.0;
const ABSORBING_TOL: f64 = 1e-12;
const BEAT_REPEAT_LAST: f64 = 0.30;
const BEAT_SEASONAL_ONLY: f64 = 0.20;
const SEASONAL_WEIGHT_TOL: f64 = 0.05;
const SHIFT_SEEDS: u64 = 3;
const SHIFT_MAJORITY: usize = 2;
const COPY_ACCURACY: f64 = 0.95;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn token_budget_table() -> Outcome {
    // (name, channels, patching, per-value, text, onecast) at L 96, P 16, k 3, vocab 437
    let table: [(&str, u64, [u64; 4]); 4] = [
        ("CzeLan", 11, [66, 1_056, 3_168, 443]),
        ("FRED-MD", 107, [642, 10_272, 30_816, 443]),
        ("Traffic", 862, [5_172, 82_752, 248_256, 443]),
        ("Wike2000", 2000, [12_000, 192_000, 576_000, 443]),
    ];
    let methods = [TokenMethod::Patching, TokenMethod::PerValue, TokenMethod::Text, TokenMethod::Onecast];
    let mut wrong = Vec::new();
    for (name, c, cells) in table {
        for (m, want) in methods.iter().zip(cells) {
            let got = token_budget(*m, 96, 16, c, 3, 437).unwrap();
            if got != want {
                wrong.push(format!("{name}/{}: {got} != {want}", m.name()));
            }
        }
    }
    outcome(wrong.is_empty(), if wrong.is_empty() { "16/16 cells exact".into() } else { wrong.join(", ") })
}

fn gradient_suite() -> Outcome {
    let mut worst_op = (0.0f64, "");
    for case in OP_CASES {
        for seed in 0..GRAD_SEEDS {
            let e = op_gradient_error(case, seed).unwrap();
            if e > worst_op.0 {
                worst_op = (e, case);
            }
        }
    }
    let joint = (0..GRAD_SEEDS).map(|s| joint_gradient_error(s).unwrap()).fold(0.0, f64::max);
    let diffusion = (0..GRAD_SEEDS).map(|s| diffusion_gradient_error(s).unwrap()).fold(0.0, f64::max);
    let worst = worst_op.0.max(joint).max(diffusion);
    outcome(
        worst < GRAD_REL_TOL,
        format!(
            "{} ops + joint + diffusion over {GRAD_SEEDS} seeds: worst op {:.1e} ({}), joint {joint:.1e}, diffusion {diffusion:.1e}, tol {GRAD_REL_TOL:.0e}",
            OP_CASES.len(),
            worst_op.0,
            worst_op.1
        ),
    )
}

fn quantizer() -> Outcome {
    let r = quantizer_oracle(QUANTIZER_INSTANCES, 2024, false).unwrap();
    outcome(
        r.mismatched_instances == 0 && r.tied_rows > 0,
        format!("{} instances, {} tied rows, {} mismatches", r.instances, r.tied_rows, r.mismatched_instances),
    )
}

fn small_dual(horizon: usize, seed: u64) -> OneCast {
    let cfg = ModelConfig {
        history_len: 96,
        horizon,
        seasonal_hidden: 8,
        tokenizer: TokenizerConfig {
            codebook_size: 8,
            code_dim: 4,
            hidden: 6,
            blocks: 1,
            ..TokenizerConfig::default()
        },
        predictor: PredictorConfig { hidden: 8, heads: 2, layers: 1, ff_mult: 2 },
        ..ModelConfig::default()
    };
    OneCast::new(cfg, vec![DomainInfo { name: "s".into(), channels: 2 }], seed).unwrap()
}

fn gradient_truncation() -> Outcome {
    let model = small_dual(96, 3);
    let series = sin_ramp(&SinRampSpec { seed: 5, len: 1000, ..SinRampSpec::default() });
    let w = common::windows(&series, 37);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut codebook_abs, mut dec_f_abs, mut n) = (0.0f64, 0.0f64, 0);
    for _ in 0..8 {
        let pair = &w.train[rand::Rng::random_range(&mut rng, 0..w.train.len())];
        let prepared = model.prepare("s", pair).unwrap();
        let mut g = onecast::numerics::Graph::new();
        let j = model.joint_graph(&mut g, "s", &prepared, 1.0).unwrap();
        let grads = g.backward(j.future_trend.unwrap()).unwrap();
        for (name, t) in g.param_grads(&grads) {
            let mass: f64 = t.data().iter().map(|v| v.abs()).sum();
            if name == CODEBOOK_E || name == CODEBOOK_M {
                codebook_abs += mass;
            } else if name.starts_with("tokenizer.dec_f") {
                dec_f_abs += mass;
            }
        }
        n += 1;
    }
    outcome(
        codebook_abs == 0.0 && dec_f_abs > 0.0,
        format!("{n} windows: |grad E|+|grad M| = {codebook_abs:e}, |grad future decoder| = {dec_f_abs:.3e}"),
    )
}

fn corruption_rates() -> Outcome {
    let layout = TokenizerConfig::default().layout();
    let clean = TokenSequence::new((0..CORRUPT_POSITIONS).map(|i| i % 7).collect(), layout);
    let mut worst_z = 0.0f64;
    let mut bad = Vec::new();
    for (k, kind) in MaskScheduler::ALL.into_iter().enumerate() {
        for (i, t) in [0.0, 0.25, 0.5, 0.75].into_iter().enumerate() {
            let p = mask_probability(kind, t).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + 10 * k as u64 + i as u64);
            let masked = corrupt(&clean, p, &mut rng).unwrap().mask_count() as f64;
            let n = CORRUPT_POSITIONS as f64;
            let sd = (n * p * (1.0 - p)).sqrt();
            let gap = (masked - n * p).abs();
            let ok = if sd == 0.0 { gap == 0.0 } else { gap <= CORRUPT_SIGMAS * sd };
            if sd > 0.0 {
                worst_z = worst_z.max(gap / sd);
            }
            if !ok {
                bad.push(format!("{kind}@{t}: {masked} masked, expected {:.0}", n * p));
            }
        }
    }
    let gap = absorbing_oracle(3, 20, 7).unwrap();
    let ok = bad.is_empty() && gap <= ABSORBING_TOL;
    let mut detail = format!("16 cells, worst |z| {worst_z:.2} (bound {CORRUPT_SIGMAS}), absorbing gap {gap:.1e} (tol {ABSORBING_TOL:.0e})");
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join(", ")));
    }
    outcome(ok, detail)
}

fn denoiser_contract() -> Outcome {
    let mut model = small_dual(192, 4);
    model.init_predictor(4).unwrap();
    let series = sin_ramp(&SinRampSpec { seed: 1, len: 400, ..SinRampSpec::default() });
    let history = series.slice_rows(0, 96);
    let a = model.forecast("s", &history, Some(4)).unwrap();
    let b = model.forecast("s", &history, Some(4)).unwrap();
    let trace = a.trace.as_ref().unwrap();
    let rounds = trace.restored_per_round();
    let tokens = a.future_tokens.as_ref().unwrap();
    let ok = tokens.len() == 24 && rounds == vec![6; 4] && !tokens.has_mask() && a == b;
    outcome(
        ok,
        format!(
            "{} future tokens, rounds {rounds:?}, mask-free {}, repeat identical {}",
            tokens.len(),
            !tokens.has_mask(),
            a == b
        ),
    )
}

fn mean_mse(model: &OneCast, test: &[onecast::data::WindowPair]) -> f64 {
    let r = evaluate(model, "s", test, &EvalOptions { horizons: vec![96], steps: None, truth_as_forecast: false }).unwrap();
    r.horizons[0].mse
}

fn seasonal_weight_recovery() -> f64 {
    let series = pure_sine(2400, 1, 24.0, 1.0);
    let w = common::windows(&series, 24);
    let cfg = ModelConfig {
        natural_periods: vec![24.0],
        seasonal_hidden: 32,
        variant: Variant::SeasonalOnly,
        ..ModelConfig::default()
    };
    let mut m = OneCast::new(cfg, vec![DomainInfo { name: "s".into(), channels: 1 }], 0).unwrap();
    let data = vec![DomainData { domain: "s".into(), train: w.train.clone(), val: w.val.clone() }];
    let train = TrainConfig { lr: 2e-3, epochs: 40, batch_size: 8, ..TrainConfig::default() };
    train_stage1(&mut m, &data, &train).unwrap();
    let idx = m.basis.periods().iter().position(|p| (p - 24.0).abs() < 1e-9).unwrap();
    let v: Vec<f64> = w.test.iter().map(|p| m.seasonal_weights(&p.history).unwrap().sin.get(idx, 0)).collect();
    v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max)
}

fn synthetic_forecasting(dual_out: &mut Option<(OneCast, Vec<onecast::data::WindowPair>)>) -> Outcome {
    let series = sin_ramp(&SinRampSpec { seed: 0, ..SinRampSpec::default() });
    let w = common::windows(&series, 8);
    let train = common::desk_train(0);
    let dual = common::train_model(common::desk_model(Variant::Dual), "s", &w, &train, 0);
    let seasonal = common::train_model(common::desk_model(Variant::SeasonalOnly), "s", &w, &train, 0);
    let dual_mse = mean_mse(&dual, &w.test);
    let seasonal_mse = mean_mse(&seasonal, &w.test);
    let baseline = w
        .test
        .iter()
        .map(|p| mse_mae(&p.future, &repeat_last(&p.history, 96)).unwrap().0)
        .sum::<f64>()
        / w.test.len() as f64;
    let vs_gap = seasonal_weight_recovery();
    let gain_base = 1.0 - dual_mse / baseline;
    let gain_seasonal = 1.0 - dual_mse / seasonal_mse;
    let ok = gain_base >= BEAT_REPEAT_LAST && gain_seasonal >= BEAT_SEASONAL_ONLY && vs_gap <= SEASONAL_WEIGHT_TOL;
    *dual_out = Some((dual, w.test.clone()));
    outcome(
        ok,
        format!(
            "{} test windows: mse {dual_mse:.4} vs repeat-last {baseline:.4} ({:.0}% lower, need {:.0}%), vs seasonal-only {seasonal_mse:.4} ({:.0}% lower, need {:.0}%); |v_s - 1| {vs_gap:.1e} (tol {SEASONAL_WEIGHT_TOL})",
            w.test.len(),
            100.0 * gain_base,
            100.0 * BEAT_REPEAT_LAST,
            100.0 * gain_seasonal,
            100.0 * BEAT_SEASONAL_ONLY
        ),
    )
}

fn distribution_shift() -> Outcome {
    let mut wins = 0;
    let mut cells = Vec::new();
    for seed in 0..SHIFT_SEEDS {
        let series = level_shift(&LevelShiftSpec {
            seed,
            alternating: true,
            segment_len: 800,
            ..LevelShiftSpec::default()
        });
        let w = common::windows(&series, 8);
        let train = common::desk_train(seed);
        let amad = |variant| {
            let m = common::train_model(common::desk_model(variant), "s", &w, &train, seed);
            evaluate(&m, "s", &w.test, &EvalOptions { horizons: vec![96], steps: None, truth_as_forecast: false })
                .unwrap()
                .horizons[0]
                .amad
        };
        let (dual, single) = (amad(Variant::Dual), amad(Variant::SingleDecoder));
        if dual < single {
            wins += 1;
        }
        cells.push(format!("seed {seed}: {dual:.3} vs {single:.3}"));
    }
    outcome(
        wins >= SHIFT_MAJORITY,
        format!("AMAD dual vs single, {wins}/{SHIFT_SEEDS} seeds dual lower (need {SHIFT_MAJORITY}): {}", cells.join(", ")),
    )
}

fn determinism() -> Outcome {
    let series = sin_ramp(&SinRampSpec { seed: 2, len: 1200, ..SinRampSpec::default() });
    let w = common::windows(&series, 16);
    let mut cfg = common::desk_model(Variant::Dual);
    cfg.tokenizer.blocks = 1;
    let train = TrainConfig { epochs: 2, diffusion_epochs: 2, ..common::desk_train(9) };
    let a = common::train_model(cfg.clone(), "s", &w, &train, 9);
    let b = common::train_model(cfg, "s", &w, &train, 9);
    let (ba, bb) = (a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ockpt");
    a.save(&path).unwrap();
    let loaded = OneCast::load(&path).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same_forecast = w.test.iter().take(5).all(|p| {
        let x = a.forecast("s", &p.history, None).unwrap();
        let y = loaded.forecast("s", &p.history, None).unwrap();
        bits(&x.values) == bits(&y.values)
    });
    outcome(
        ba == bb && same_forecast,
        format!("checkpoints {} bytes, identical {}; reloaded forecasts bit-exact {same_forecast}", ba.len(), ba == bb),
    )
}

fn copy_accuracy(kind: MaskScheduler) -> (f64, f64) {
    let (k, dim) = (16, 16);
    let cfg = ModelConfig {
        seasonal_hidden: 4,
        tokenizer: TokenizerConfig { codebook_size: k, code_dim: dim, hidden: 4, blocks: 1, ..TokenizerConfig::default() },
        predictor: PredictorConfig { hidden: 32, heads: 2, layers: 1, ff_mult: 2 },
        scheduler: kind,
        ..ModelConfig::default()
    };
    let mut m = OneCast::new(cfg, vec![DomainInfo { name: "c".into(), channels: 1 }], 0).unwrap();
    // a unit-scale codebook keeps the token embeddings distinguishable
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    m.store.set(CODEBOOK_E, Tensor::from_fn(k, dim, |_, _| StandardNormal.sample(&mut rng)));
    m.store.set(CODEBOOK_M, Tensor::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { 0.0 }));
    let n = m.config.history_tokens();
    let train = TrainConfig {
        diffusion_lr: Some(3e-3),
        diffusion_epochs: 10,
        batch_size: 32,
        lr_decay_every_steps: 1000,
        ..TrainConfig::default()
    };
    let report = train_predictor(&mut m, &[("c".into(), token_copy(600, n, k, 1))], &token_copy(100, n, k, 2), &train).unwrap();
    let finite = report.steps.iter().all(|s| s.loss.is_finite()) && report.summary.best_validation.is_finite();
    let p = m.predictor().unwrap();
    let test = token_copy(200, n, k, 3);
    let acc = test
        .iter()
        .map(|pair| {
            let h = TokenSequence::new(pair.history.clone(), m.config.tokenizer.layout());
            let (out, _) = denoise_infer(&p, &h, n, m.config.inference_steps, None).unwrap();
            token_accuracy(&out.ids, &pair.future).unwrap()
        })
        .sum::<f64>()
        / test.len() as f64;
    (if finite { report.summary.best_validation } else { f64::NAN }, acc)
}

fn ablation_parity(dual: &Option<(OneCast, Vec<onecast::data::WindowPair>)>) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    match dual {
        Some((model, test)) => {
            for steps in [1, 4, 8] {
                let clean = test.iter().take(10).all(|p| {
                    let f = model.forecast("s", &p.history, Some(steps)).unwrap();
                    !f.future_tokens.unwrap().has_mask() && f.values.is_finite()
                });
                ok &= clean;
                parts.push(format!("steps {steps} mask-free {clean}"));
            }
        }
        None => {
            ok = false;
            parts.push("no trained model".into());
        }
    }
    for kind in MaskScheduler::ALL {
        let (loss, acc) = copy_accuracy(kind);
        ok &= loss.is_finite() && acc >= COPY_ACCURACY;
        parts.push(format!("{kind} copy acc {:.1}%", 100.0 * acc));
    }
    outcome(ok, format!("{} (need {:.0}%)", parts.join(", "), 100.0 * COPY_ACCURACY))
}

fn main() {
    let mut dual = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = f();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict}  {name}: {} [{:.1?}]", o.detail, t0.elapsed());
        if !o.passed {
            failed += 1;
        }
    };
    report(1, "token budget table", &mut token_budget_table);
    report(2, "gradient suite", &mut gradient_suite);
    report(3, "quantizer oracle", &mut quantizer);
    report(4, "future-decoder gradient truncation", &mut gradient_truncation);
    report(5, "corruption consistency", &mut corruption_rates);
    report(6, "denoiser contract", &mut denoiser_contract);
    report(7, "synthetic end-to-end forecasting", &mut || synthetic_forecasting(&mut dual));
    report(8, "distribution-shift AMAD", &mut distribution_shift);
    report(9, "determinism and persistence", &mut determinism);
    report(10, "ablation harness parity", &mut || ablation_parity(&dual));
    println!("{} criteria, {failed} failed", 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
