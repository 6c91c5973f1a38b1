use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use onecast::data::{make_windows, token_budget, SplitFractions, TokenMethod};
use onecast::decomposition::{decompose_values, denormalize, moving_average_decompose, normalize_values};
use onecast::diffusion::{denoise_infer, mask_probability, MaskScheduler, PredictorConfig, TokenPredictor};
use onecast::numerics::{init, Graph, ParamStore};
use onecast::pipeline::round_robin_batches;
use onecast::seasonal::{build_basis, evaluate_basis, predict_weights, SeasonalWeights};
use onecast::selfcheck::brute_force_nearest;
use onecast::tokenizer::{self, nearest_codes, quantize, TokenSequence, TokenizerConfig};
use onecast::Tensor;

fn series(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Tensor> {
    (rows, cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_round_trip(x in series(2..40, 1..4)) {
        let (z, stats) = normalize_values(&x, 1e-5).unwrap();
        let back = denormalize(&z, &stats).unwrap();
        prop_assert!(max_abs_diff(&x, &back) < 1e-9);
    }

    #[test]
    fn decomposition_partitions_the_normalized_window(x in series(2..60, 1..4), n in 1usize..30) {
        let d = decompose_values(&x, 1e-5, n).unwrap();
        let (z, _) = normalize_values(&x, 1e-5).unwrap();
        // season is stored as x - trend, so adding back can be one ulp off
        let sum = d.trend.zip_map(&d.season, |a, b| a + b).unwrap();
        prop_assert!(max_abs_diff(&sum, &z) < 1e-12);
    }

    #[test]
    fn moving_average_is_shift_equivariant(x in series(40..80, 1..3), n in 1usize..10, k in 1usize..8) {
        let len = x.rows() - k;
        let a = moving_average_decompose(&x.slice_rows(0, len), n).unwrap();
        let b = moving_average_decompose(&x.slice_rows(k, len), n).unwrap();
        for t in n - 1..len - k {
            for c in 0..x.cols() {
                prop_assert!((b.trend.get(t, c) - a.trend.get(t + k, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn basis_evaluation_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let basis = build_basis(&[24.0, 12.0, 7.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = |rng: &mut ChaCha8Rng| SeasonalWeights {
            sin: init::normal(&[3, 2], 1.0, rng),
            cos: init::normal(&[3, 2], 1.0, rng),
        };
        let (w1, w2) = (w(&mut rng), w(&mut rng));
        let mix = SeasonalWeights {
            sin: w1.sin.zip_map(&w2.sin, |x, y| a * x + b * y).unwrap(),
            cos: w1.cos.zip_map(&w2.cos, |x, y| a * x + b * y).unwrap(),
        };
        let lhs = evaluate_basis(&basis, &mix, 5, 50).unwrap();
        let e1 = evaluate_basis(&basis, &w1, 5, 50).unwrap();
        let e2 = evaluate_basis(&basis, &w2, 5, 50).unwrap();
        let rhs = e1.zip_map(&e2, |x, y| a * x + b * y).unwrap();
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn seasonal_weights_follow_channel_permutation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        onecast::seasonal::init_params(&mut store, 16, 8, 3, &mut rng).unwrap();
        store.set("seasonal.l2.w", init::normal(&[8, 6], 0.5, &mut rng));
        let x = init::normal(&[16, 3], 1.0, &mut rng);
        let perm = [2, 0, 1];
        let xp = Tensor::from_fn(16, 3, |t, c| x.get(t, perm[c]));
        let w = predict_weights(&store, &x).unwrap();
        let wp = predict_weights(&store, &xp).unwrap();
        for i in 0..3 {
            for (c, &src) in perm.iter().enumerate() {
                prop_assert_eq!(wp.sin.get(i, c), w.sin.get(i, src));
                prop_assert_eq!(wp.cos.get(i, c), w.cos.get(i, src));
            }
        }
    }

    #[test]
    fn nearest_codes_agree_with_exhaustive_search(seed in any::<u64>(), n in 1usize..=16, k in 1usize..=16, d in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = init::normal(&[n, d], 1.0, &mut rng);
        let e = init::normal(&[k, d], 1.0, &mut rng);
        prop_assert_eq!(nearest_codes(&z, &e).unwrap(), brute_force_nearest(&z, &e, false));
    }

    #[test]
    fn quantized_rows_are_codebook_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let z = g.constant(init::normal(&[7, 3], 1.0, &mut rng));
        let e = g.constant(init::normal(&[5, 3], 1.0, &mut rng));
        let q = quantize(&mut g, z, e, 0.25).unwrap();
        let (zq, eh) = (g.value(q.z_q).clone(), g.value(e).clone());
        for (i, &tok) in q.tokens.iter().enumerate() {
            prop_assert_eq!(zq.row(i), eh.row(tok));
        }
    }

    #[test]
    fn schedulers_stay_in_unit_interval(t in 0.0f64..=1.0) {
        for kind in MaskScheduler::ALL {
            let p = mask_probability(kind, t).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn onecast_budget_ignores_channels(c in 1u64..=2000, len in 1u64..2000, patch in 1u64..64) {
        let base = token_budget(TokenMethod::Onecast, len, patch, 1, 3, 437).unwrap();
        prop_assert_eq!(token_budget(TokenMethod::Onecast, len, patch, c, 3, 437).unwrap(), base);
    }

    #[test]
    fn round_robin_touches_every_domain(counts in proptest::collection::vec(1usize..40, 1..5), bs in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = round_robin_batches(&counts, bs, &mut rng);
        for (d, &n) in counts.iter().enumerate() {
            let mut seen: Vec<usize> = batches.iter().filter(|b| b.0 == d).flat_map(|b| b.1.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn splits_are_chronological_and_disjoint(len in 300usize..800, stride in 1usize..12) {
        let x = Tensor::from_fn(len, 1, |t, _| t as f64);
        let w = make_windows(&x, 32, 16, stride, &SplitFractions::default()).unwrap();
        let spans: Vec<Vec<(f64, f64)>> = [&w.train, &w.val, &w.test]
            .iter()
            .map(|s| s.iter().map(|p| (p.history.get(0, 0), p.future.get(p.future.rows() - 1, 0))).collect())
            .collect();
        for s in &spans {
            prop_assert!(s.windows(2).all(|p| p[0].0 < p[1].0));
        }
        for pair in spans.windows(2) {
            if let (Some(last), Some(first)) = (pair[0].last(), pair[1].first()) {
                prop_assert!(last.1 < first.0);
            }
        }
    }
}

fn tiny_predictor(seed: u64) -> (ParamStore, PredictorConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = PredictorConfig { hidden: 8, heads: 2, layers: 1, ff_mult: 2 };
    let tcfg = TokenizerConfig { codebook_size: 6, code_dim: 4, hidden: 4, blocks: 1, ..TokenizerConfig::default() };
    let mut store = ParamStore::new();
    tokenizer::init_params(&mut store, &tcfg, &mut rng).unwrap();
    store.set(tokenizer::CODEBOOK_E, init::normal(&[6, 4], 1.0, &mut rng));
    cfg.init_params(&mut store, 4, 6, &mut rng).unwrap();
    TokenPredictor::init_mask_embedding(&mut store).unwrap();
    (store, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn denoising_fills_every_position_once(seed in any::<u64>(), future_len in 1usize..20, steps_raw in 1usize..20, hist in proptest::collection::vec(0usize..6, 1..12)) {
        let steps = steps_raw.min(future_len);
        let (store, cfg) = tiny_predictor(seed);
        let p = TokenPredictor::new(&store, &cfg).unwrap();
        let layout = TokenizerConfig::default().layout();
        let h = TokenSequence::new(hist, layout);
        let (out, trace) = denoise_infer(&p, &h, future_len, steps, None).unwrap();
        prop_assert!(!out.has_mask());
        prop_assert_eq!(out.len(), future_len);
        prop_assert_eq!(trace.rounds.len(), steps);
        let mut positions: Vec<usize> = trace.rounds.iter().flat_map(|r| r.positions.clone()).collect();
        positions.sort_unstable();
        prop_assert_eq!(positions, (0..future_len).collect::<Vec<_>>());
        let per = trace.restored_per_round();
        prop_assert!(per[..steps - 1].iter().all(|&c| c == future_len / steps));
        let (again, _) = denoise_infer(&p, &h, future_len, steps, None).unwrap();
        prop_assert_eq!(again, out);
    }
}

#[test]
fn identity_layers_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = init::normal(&[3, 10], 1.0, &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut kernel = Tensor::zeros(&[3, 3, 1]);
    for c in 0..3 {
        kernel.data_mut()[c * 3 + c] = 1.0;
    }
    let w = g.constant(kernel);
    let y = g.conv1d(xv, w, 1, 0).unwrap();
    assert_eq!(g.value(y), &x);

    let rows = init::normal(&[4, 5], 1.0, &mut rng);
    let rv = g.constant(rows.clone());
    let eye = g.constant(Tensor::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 }));
    let zero = g.constant(Tensor::zeros(&[5]));
    let out = onecast::numerics::layers::linear(&mut g, rv, eye, zero).unwrap();
    assert_eq!(g.value(out), &rows);
}
