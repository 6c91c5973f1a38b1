use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::layers::{self, BlockDims};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::tokenizer::{self, MASK};

pub const PREFIX: &str = "predictor";
pub const MASK_EMBEDDING: &str = "predictor.mask_embedding";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width as a multiple of `hidden`.
    pub ff_mult: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 4,
            layers: 2,
            ff_mult: 4,
        }
    }
}

impl PredictorConfig {
    pub fn dims(&self) -> BlockDims {
        BlockDims {
            width: self.hidden,
            heads: self.heads,
            ff: self.hidden * self.ff_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("predictor needs at least one layer".into()));
        }
        self.dims().validate()
    }

    /// Transformer parameters and output head. The mask embedding is added
    /// separately once the codebook is trained.
    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, code_dim: usize, vocab: usize, rng: &mut R) -> Result<()> {
        self.validate()?;
        layers::linear_params(store, &format!("{PREFIX}.in"), code_dim, self.hidden, rng)?;
        for l in 0..self.layers {
            layers::attention_block_params(store, &format!("{PREFIX}.block{l}"), self.dims(), rng)?;
        }
        layers::layer_norm_params(store, &format!("{PREFIX}.ln_f"), self.hidden)?;
        layers::linear_params(store, &format!("{PREFIX}.head"), self.hidden, vocab, rng)
    }
}

/// The denoising transformer together with the frozen token embeddings it
/// reads (rows of the transformed codebook).
pub struct TokenPredictor<'a> {
    store: &'a ParamStore,
    cfg: &'a PredictorConfig,
    embeddings: Tensor,
}

impl<'a> TokenPredictor<'a> {
    pub fn new(store: &'a ParamStore, cfg: &'a PredictorConfig) -> Result<Self> {
        let embeddings = tokenizer::transformed_codebook_value(store)?;
        if !store.contains(MASK_EMBEDDING) {
            return Err(Error::Checkpoint("predictor has no mask embedding".into()));
        }
        Ok(Self { store, cfg, embeddings })
    }

    pub fn vocab(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Sets the mask embedding to the mean of the transformed codebook rows.
    pub fn init_mask_embedding(store: &mut ParamStore) -> Result<()> {
        let e_hat = tokenizer::transformed_codebook_value(store)?;
        let (k, d) = e_hat.expect_2d("mask_embedding")?;
        let mean = Tensor::from_fn(1, d, |_, j| (0..k).map(|i| e_hat.get(i, j)).sum::<f64>() / k as f64);
        store.set(MASK_EMBEDDING, mean);
        Ok(())
    }

    /// Logits `[N×K]` for every position of `ids`; MASK positions read the
    /// mask embedding instead of a codebook row.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let k = self.vocab();
        if ids.is_empty() {
            return Err(Error::Precondition("predictor input is empty".into()));
        }
        let lookup: Vec<usize> = ids
            .iter()
            .map(|&id| match id {
                MASK => Ok(k),
                id if id < k => Ok(id),
                id => Err(Error::Vocabulary { id, size: k }),
            })
            .collect::<Result<_>>()?;
        let table = g.constant(self.embeddings.clone());
        let mask = g.param(self.store, MASK_EMBEDDING)?;
        let table = g.concat_rows(&[table, mask])?;
        let z = g.gather_rows(table, &lookup)?;
        let h = layers::linear_fwd(g, self.store, &format!("{PREFIX}.in"), z)?;
        let pos = g.constant(layers::sinusoidal_positions(ids.len(), self.cfg.hidden));
        let mut h = g.add(h, pos)?;
        for l in 0..self.cfg.layers {
            h = layers::attention_block(g, self.store, &format!("{PREFIX}.block{l}"), h, self.cfg.heads)?.out;
        }
        let h = layers::layer_norm_fwd(g, self.store, &format!("{PREFIX}.ln_f"), h)?;
        layers::linear_fwd(g, self.store, &format!("{PREFIX}.head"), h)
    }

    pub fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, ids)?;
        Ok(g.value(out).clone())
    }
}

/// History tokens and the future tokens that follow them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub history: Vec<usize>,
    pub future: Vec<usize>,
}

/// Cross-entropy averaged over the positions flagged in `masked`.
pub fn diffusion_loss(g: &mut Graph, logits: Var, targets: &[usize], masked: &[bool]) -> Result<Var> {
    if masked.len() != targets.len() {
        return Err(Error::dim("diffusion_loss", &[targets.len()], &[masked.len()]));
    }
    if !masked.iter().any(|&m| m) {
        return Err(Error::DegenerateBatch("no masked positions".into()));
    }
    let weights: Vec<f64> = masked.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    g.softmax_cross_entropy(logits, targets, &weights)
}

/// Fraction of positions where `pred` equals `truth`.
pub fn token_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("token_accuracy", &[pred.len()], &[truth.len()]));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tokenizer::TokenizerConfig;

    fn setup() -> (ParamStore, PredictorConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tcfg = TokenizerConfig {
            codebook_size: 6,
            code_dim: 4,
            hidden: 4,
            ..TokenizerConfig::default()
        };
        let pcfg = PredictorConfig {
            hidden: 8,
            heads: 2,
            layers: 2,
            ff_mult: 2,
        };
        let mut store = ParamStore::new();
        tokenizer::init_params(&mut store, &tcfg, &mut rng).unwrap();
        pcfg.init_params(&mut store, 4, 6, &mut rng).unwrap();
        TokenPredictor::init_mask_embedding(&mut store).unwrap();
        (store, pcfg)
    }

    #[test]
    fn logits_shape_and_vocab_errors() {
        let (store, cfg) = setup();
        let p = TokenPredictor::new(&store, &cfg).unwrap();
        assert_eq!(p.logits(&[0, 1, MASK, 5]).unwrap().shape(), &[4, 6]);
        assert!(matches!(p.logits(&[0, 6]), Err(Error::Vocabulary { id: 6, size: 6 })));
    }

    #[test]
    fn masked_content_is_invisible() {
        let (store, cfg) = setup();
        let p = TokenPredictor::new(&store, &cfg).unwrap();
        let mask_at = |mut ids: Vec<usize>, i: usize| {
            ids[i] = MASK;
            ids
        };
        let a = p.logits(&mask_at(vec![0, 1, 2, 3], 2)).unwrap();
        let b = p.logits(&mask_at(vec![0, 1, 4, 3], 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, p.logits(&[0, 1, 2, 3]).unwrap());
    }

    #[test]
    fn mask_embedding_is_codebook_mean() {
        let (store, _) = setup();
        let e_hat = tokenizer::transformed_codebook_value(&store).unwrap();
        let m = store.value(MASK_EMBEDDING).unwrap();
        for j in 0..4 {
            let mean = e_hat.column(j).iter().sum::<f64>() / 6.0;
            assert!((m.get(0, j) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[3, 128]));
        let l = diffusion_loss(&mut g, logits, &[0, 5, 7], &[true, false, true]).unwrap();
        assert!((g.value(l).item() - 128f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unmasked_positions_do_not_count() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![5.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![5.0, 0.0], vec![9.0, -3.0]]).unwrap());
        let la = diffusion_loss(&mut g, a, &[0, 1], &[true, false]).unwrap();
        let lb = diffusion_loss(&mut g, b, &[0, 1], &[true, false]).unwrap();
        assert_eq!(g.value(la).item(), g.value(lb).item());
        let none = diffusion_loss(&mut g, a, &[0, 1], &[false, false]);
        assert!(matches!(none, Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn confident_logits_give_small_loss() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::from_rows(&[vec![60.0, 0.0, 0.0]]).unwrap());
        let l = diffusion_loss(&mut g, logits, &[0], &[true]).unwrap();
        assert!(g.value(l).item() < 1e-20);
    }

    #[test]
    fn accuracy() {
        assert_eq!(token_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
        assert!(token_accuracy(&[1], &[1, 2]).is_err());
    }
}
