//! Numeric self-tests: finite-difference gradients for every graph op and
//! both composed objectives, a brute-force quantizer oracle, scheduler range
//! checks and an explicit matrix-product oracle for the absorbing chain.
//!
//! The same routines back the `selfcheck` command and the acceptance tests.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::synthetic::{sin_ramp, SinRampSpec};
use crate::data::WindowPair;
use crate::diffusion::{
    absorbing_marginal, absorbing_transition, corrupt, diffusion_loss, mask_probability, MaskScheduler, PredictorConfig,
    TokenPredictor,
};
use crate::error::{Error, Result};
use crate::numerics::{finite_difference_check, init, CheckSpec, Graph, ParamStore, Tensor, Var};
use crate::pipeline::{DomainInfo, ModelConfig, OneCast, Variant};
use crate::tokenizer::{self, nearest_codes, PatchLayout, TokenSequence, TokenizerConfig};

/// Relative-error bound for every gradient check.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Every single-op gradient case.
pub const OP_CASES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "mul_row",
    "add_col",
    "matmul",
    "matmul_bt",
    "transpose",
    "reshape",
    "gelu",
    "relu",
    "square",
    "sum",
    "mean",
    "mse",
    "softmax_rows",
    "layer_norm",
    "conv1d",
    "conv1d_strided",
    "col_slice",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "softmax_cross_entropy",
    "straight_through",
    "stop_gradient",
];

/// Random projection `Σ y ⊙ r` so every output entry carries gradient.
fn project(g: &mut Graph, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = g.constant(init::normal(&shape, 1.0, rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

/// Values with magnitude in `[0.2, 1.2]`, away from the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..1.2);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn op_store(case: &str, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut s = ParamStore::new();
    let mut put = |name: &str, t: Tensor| s.insert(name, t).expect("fresh name");
    let n = |shape: &[usize], rng: &mut ChaCha8Rng| init::normal(shape, 1.0, rng);
    match case {
        "add_row" | "mul_row" => {
            put("a", n(&[3, 4], rng));
            put("b", n(&[4], rng));
        }
        "add_col" => {
            put("a", n(&[3, 4], rng));
            put("b", n(&[3], rng));
        }
        "matmul" => {
            put("a", n(&[3, 4], rng));
            put("b", n(&[4, 2], rng));
        }
        "matmul_bt" => {
            put("a", n(&[3, 4], rng));
            put("b", n(&[5, 4], rng));
        }
        "relu" => put("a", off_kink(&[3, 4], rng)),
        "layer_norm" => {
            put("a", n(&[3, 5], rng));
            put("b", n(&[5], rng));
            put("c", n(&[5], rng));
        }
        "conv1d" | "conv1d_strided" => {
            put("a", n(&[2, 9], rng));
            put("b", n(&[3, 2, 3], rng));
        }
        "concat_cols" => {
            put("a", n(&[3, 2], rng));
            put("b", n(&[3, 4], rng));
        }
        "concat_rows" => {
            put("a", n(&[2, 3], rng));
            put("b", n(&[4, 3], rng));
        }
        "gather_rows" => put("a", n(&[5, 3], rng)),
        "softmax_cross_entropy" => put("a", n(&[4, 5], rng)),
        _ => {
            put("a", n(&[3, 4], rng));
            put("b", n(&[3, 4], rng));
        }
    }
    s
}

fn op_forward(case: &str, g: &mut Graph, s: &ParamStore, rng: &mut ChaCha8Rng) -> Result<Var> {
    let a = g.param(s, "a")?;
    let b = if s.contains("b") { Some(g.param(s, "b")?) } else { None };
    let b = || b.ok_or_else(|| Error::Config("case has no second operand".into()));
    let y = match case {
        "add" => g.add(a, b()?)?,
        "sub" => g.sub(a, b()?)?,
        "mul" => g.mul(a, b()?)?,
        "scale" => g.scale(a, -1.7),
        "add_row" => g.add_row(a, b()?)?,
        "mul_row" => g.mul_row(a, b()?)?,
        "add_col" => g.add_col(a, b()?)?,
        "matmul" => g.matmul(a, b()?)?,
        "matmul_bt" => g.matmul_bt(a, b()?)?,
        "transpose" => g.transpose(a)?,
        "reshape" => g.reshape(a, &[2, 6])?,
        "gelu" => g.gelu(a),
        "relu" => g.relu(a),
        "square" => g.square(a),
        "sum" => {
            let m = g.mul(a, b()?)?;
            g.sum(m)
        }
        "mean" => {
            let m = g.mul(a, b()?)?;
            g.mean(m)
        }
        "mse" => g.mse(a, b()?)?,
        "softmax_rows" => g.softmax_rows(a)?,
        "layer_norm" => {
            let c = g.param(s, "c")?;
            g.layer_norm(a, b()?, c)?
        }
        "conv1d" => g.conv1d(a, b()?, 1, 1)?,
        "conv1d_strided" => g.conv1d(a, b()?, 2, 0)?,
        "col_slice" => g.col_slice(a, 1, 2)?,
        "concat_cols" => g.concat_cols(&[a, b()?])?,
        "concat_rows" => g.concat_rows(&[a, b()?])?,
        "gather_rows" => g.gather_rows(a, &[4, 0, 4, 2])?,
        "softmax_cross_entropy" => return g.softmax_cross_entropy(a, &[1, 0, 4, 4], &[1.0, 0.5, 0.0, 2.0]),
        "straight_through" => {
            let target = g.constant(init::normal(&[3, 4], 1.0, rng));
            let st = g.straight_through(a, target)?;
            // product with `b` makes the forward value matter too
            g.mul(st, b()?)?
        }
        "stop_gradient" => {
            let c = g.stop_gradient(a)?;
            let p = g.mul(c, b()?)?;
            g.add(p, a)?
        }
        other => return Err(Error::Config(format!("unknown gradient case `{other}`"))),
    };
    project(g, y, rng)
}

/// Maximum relative gradient error of one op case at one seed.
pub fn op_gradient_error(case: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = op_store(case, &mut rng);
    let proj_seed: u64 = rng.random();
    let spec = CheckSpec::all(&store, 1e-6);
    let report = finite_difference_check(&mut store, &spec, |g, s| {
        // same projection on every evaluation
        let mut r = ChaCha8Rng::seed_from_u64(proj_seed);
        op_forward(case, g, s, &mut r)
    })?;
    Ok(report.max_rel_error)
}

fn gradient_model_config() -> ModelConfig {
    ModelConfig {
        history_len: 32,
        horizon: 16,
        ma_window: 5,
        natural_periods: vec![8.0],
        seasonal_hidden: 6,
        tokenizer: TokenizerConfig {
            codebook_size: 6,
            code_dim: 3,
            hidden: 4,
            patch_len: 8,
            wave_len: 4,
            blocks: 1,
            ..TokenizerConfig::default()
        },
        predictor: PredictorConfig {
            hidden: 8,
            heads: 2,
            layers: 1,
            ff_mult: 2,
        },
        inference_steps: 2,
        variant: Variant::Dual,
        ..ModelConfig::default()
    }
}

/// Maximum relative error of the joint objective (gamma 1) over a sample of
/// every stage-one parameter.
pub fn joint_gradient_error(seed: u64) -> Result<f64> {
    let domains = vec![DomainInfo {
        name: "g".into(),
        channels: 2,
    }];
    let mut model = OneCast::new(gradient_model_config(), domains, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // the seasonal output layer starts at zero; give it a value so every
    // path carries gradient
    for name in ["seasonal.l2.w", "seasonal.l2.b"] {
        let shape = model.store.value(name)?.shape().to_vec();
        model.store.set(name, init::normal(&shape, 0.1, &mut rng));
    }
    let series = sin_ramp(&SinRampSpec {
        len: 48,
        channels: 2,
        period: 8.0,
        seed,
        ..SinRampSpec::default()
    });
    let pair = WindowPair {
        start: 0,
        history: series.slice_rows(0, 32),
        future: series.slice_rows(32, 16),
    };
    let w = model.prepare("g", &pair)?;
    let mut store = model.store.clone();
    let spec = CheckSpec::all(&store, 1e-5).sampled(3, seed);
    let report = finite_difference_check(&mut store, &spec, |g, s| {
        let m = OneCast {
            store: s.clone(),
            ..model.clone()
        };
        Ok(m.joint_graph(g, "g", &w, 1.0)?.total)
    })?;
    Ok(report.max_rel_error)
}

/// Maximum relative error of the masked-token cross-entropy over a sample
/// of every predictor parameter.
pub fn diffusion_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tcfg = TokenizerConfig {
        codebook_size: 5,
        code_dim: 3,
        ..TokenizerConfig::default()
    };
    let pcfg = PredictorConfig {
        hidden: 8,
        heads: 2,
        layers: 1,
        ff_mult: 2,
    };
    let mut store = ParamStore::new();
    store.insert(tokenizer::CODEBOOK_E, init::normal(&[5, 3], 1.0, &mut rng))?;
    store.insert(tokenizer::CODEBOOK_M, init::normal(&[3, 3], 0.5, &mut rng))?;
    pcfg.init_params(&mut store, tcfg.code_dim, tcfg.codebook_size, &mut rng)?;
    TokenPredictor::init_mask_embedding(&mut store)?;
    let layout = PatchLayout {
        patch_len: 4,
        wave_len: 2,
    };
    let n = 6;
    let targets: Vec<usize> = (0..2 * n).map(|_| rng.random_range(0..5)).collect();
    let future = TokenSequence::new(targets[n..].to_vec(), layout);
    let mut masked_future = corrupt(&future, 0.5, &mut rng)?;
    if !masked_future.has_mask() {
        masked_future.ids[0] = tokenizer::MASK;
    }
    let mut ids = targets[..n].to_vec();
    ids.extend_from_slice(&masked_future.ids);
    let masked: Vec<bool> = ids.iter().map(|&i| i == tokenizer::MASK).collect();
    let spec = CheckSpec::with_prefixes(&store, &["predictor."], 1e-5).sampled(3, seed);
    let report = finite_difference_check(&mut store, &spec, |g, s| {
        let p = TokenPredictor::new(s, &pcfg)?;
        let logits = p.forward(g, &ids)?;
        diffusion_loss(g, logits, &targets, &masked)
    })?;
    Ok(report.max_rel_error)
}

/// Lowest index among the exact minimizers of `Σ (z − e)²`.
pub fn brute_force_nearest(z: &Tensor, e_hat: &Tensor, prefer_high: bool) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            let dists: Vec<f64> = (0..e_hat.rows())
                .map(|k| z.row(i).iter().zip(e_hat.row(k)).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut hits = (0..dists.len()).filter(|&k| dists[k] == best);
            if prefer_high {
                hits.next_back().expect("non-empty")
            } else {
                hits.next().expect("non-empty")
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QuantizerOracle {
    pub instances: usize,
    /// Rows whose minimum distance is attained by more than one code.
    pub tied_rows: usize,
    pub mismatched_instances: usize,
}

/// Compares `nearest_codes` with exhaustive search on random instances.
/// Every other instance uses small integer coordinates and duplicated codes
/// so exact ties are common.
pub fn quantizer_oracle(instances: usize, seed: u64, fault: bool) -> Result<QuantizerOracle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = QuantizerOracle {
        instances,
        ..QuantizerOracle::default()
    };
    for i in 0..instances {
        let n = rng.random_range(1..=16);
        let k = rng.random_range(1..=16);
        let d = rng.random_range(1..=4);
        let (z, e) = if i % 2 == 0 {
            (init::normal(&[n, d], 1.0, &mut rng), init::normal(&[k, d], 1.0, &mut rng))
        } else {
            let int = |r: usize, rng: &mut ChaCha8Rng| {
                Tensor::from_fn(r, d, |_, _| rng.random_range(-1i32..=1) as f64)
            };
            let z = int(n, &mut rng);
            let mut e = int(k, &mut rng);
            if k > 1 {
                let (src, dst) = (rng.random_range(0..k), rng.random_range(0..k));
                let row = e.row(src).to_vec();
                for (j, v) in row.into_iter().enumerate() {
                    e.set(dst, j, v);
                }
            }
            (z, e)
        };
        let low = brute_force_nearest(&z, &e, false);
        let high = brute_force_nearest(&z, &e, true);
        out.tied_rows += low.iter().zip(&high).filter(|(a, b)| a != b).count();
        let expected = if fault { high } else { low };
        if nearest_codes(&z, &e)? != expected {
            out.mismatched_instances += 1;
        }
    }
    Ok(out)
}

/// Every scheduler stays in `[0, 1]` on a fine grid and rejects noise
/// levels outside `[0, 1]`.
pub fn scheduler_ranges() -> Result<Vec<(MaskScheduler, f64, f64)>> {
    let mut out = Vec::new();
    for kind in MaskScheduler::ALL {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let p = mask_probability(kind, i as f64 / 1000.0)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Numeric(format!("{kind} gives {p}")));
            }
            lo = lo.min(p);
            hi = hi.max(p);
        }
        for t in [-0.01, 1.01, f64::NAN] {
            if mask_probability(kind, t).is_ok() {
                return Err(Error::Numeric(format!("{kind} accepted noise level {t}")));
            }
        }
        out.push((kind, lo, hi));
    }
    Ok(out)
}

/// Largest gap between the closed-form survival probability and the
/// explicit product of one-step transition matrices over `symbols` states
/// plus MASK, at every step of a random schedule.
pub fn absorbing_oracle(symbols: usize, steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..0.5)).collect();
    let n = symbols + 1;
    let mut prod = Tensor::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let mut worst: f64 = 0.0;
    for t in 1..=steps {
        prod = prod.matmul(&absorbing_transition(betas[t - 1], symbols)?)?;
        let survive = absorbing_marginal(&betas, t)?;
        for i in 0..n {
            for j in 0..n {
                let expected = if i == symbols {
                    if j == symbols {
                        1.0
                    } else {
                        0.0
                    }
                } else if j == i {
                    survive
                } else if j == symbols {
                    1.0 - survive
                } else {
                    0.0
                };
                worst = worst.max((prod.get(i, j) - expected).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SelfcheckOptions {
    /// Seeds per gradient case.
    pub gradient_seeds: u64,
    pub quantizer_instances: usize,
    /// Deliberately wrong oracle (exercises the failure path).
    pub inject_fault: bool,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        Self {
            gradient_seeds: 3,
            quantizer_instances: 1000,
            inject_fault: false,
        }
    }
}

fn worst_over_seeds(seeds: u64, f: impl Fn(u64) -> Result<f64> + Sync + Send) -> Result<f64> {
    use rayon::prelude::*;
    let errs = (0..seeds).into_par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

fn gradient_check(name: &str, seeds: u64, f: impl Fn(u64) -> Result<f64> + Sync + Send) -> Check {
    match worst_over_seeds(seeds, f) {
        Ok(e) => Check {
            name: format!("grad {name}"),
            passed: e < GRADIENT_TOLERANCE,
            detail: format!("max rel err {e:.2e} over {seeds} seeds"),
        },
        Err(e) => Check {
            name: format!("grad {name}"),
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run(opts: &SelfcheckOptions) -> Vec<Check> {
    let mut checks: Vec<Check> = OP_CASES
        .iter()
        .map(|case| gradient_check(case, opts.gradient_seeds, |s| op_gradient_error(case, s)))
        .collect();
    checks.push(gradient_check("joint objective", opts.gradient_seeds, joint_gradient_error));
    checks.push(gradient_check("diffusion loss", opts.gradient_seeds, diffusion_gradient_error));

    checks.push(match quantizer_oracle(opts.quantizer_instances, 11, opts.inject_fault) {
        Ok(q) => Check {
            name: "quantizer oracle".into(),
            passed: q.mismatched_instances == 0,
            detail: format!(
                "{} instances, {} tied rows, {} mismatches",
                q.instances, q.tied_rows, q.mismatched_instances
            ),
        },
        Err(e) => Check {
            name: "quantizer oracle".into(),
            passed: false,
            detail: e.to_string(),
        },
    });
    checks.push(match scheduler_ranges() {
        Ok(r) => Check {
            name: "scheduler ranges".into(),
            passed: true,
            detail: r
                .iter()
                .map(|(k, lo, hi)| format!("{k} [{lo:.3}, {hi:.3}]"))
                .collect::<Vec<_>>()
                .join(", "),
        },
        Err(e) => Check {
            name: "scheduler ranges".into(),
            passed: false,
            detail: e.to_string(),
        },
    });
    checks.push(match absorbing_oracle(2, 20, 5) {
        Ok(gap) => Check {
            name: "absorbing marginal".into(),
            passed: gap <= 1e-12,
            detail: format!("max gap {gap:.1e} over 20 steps, 3 states"),
        },
        Err(e) => Check {
            name: "absorbing marginal".into(),
            passed: false,
            detail: e.to_string(),
        },
    });
    checks
}

pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{status}  {:width$}  {}", c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "{} checks, {failed} failed", checks.len());
    s
}
