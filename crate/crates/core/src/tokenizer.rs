//! Trend tokenizer: a convolutional encoder over all channels of a window,
//! nearest-neighbour quantization against the transformed codebook
//! `Ê = E·M`, and two decoders that share the codebook.
//!
//! The history decoder reconstructs the history trend. The future decoder
//! maps future tokens to a trend expressed in *history* normalization, so
//! that denormalizing with history statistics lands on the future scale.
//! Its input is detached from the codebook.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{init, layers, Graph, ParamStore, Tensor, Var};

pub const PREFIX: &str = "tokenizer";
pub const CODEBOOK_E: &str = "tokenizer.codebook.e";
pub const CODEBOOK_M: &str = "tokenizer.codebook.m";

/// Sentinel id for a masked position.
pub const MASK: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Vocabulary size K.
    pub codebook_size: usize,
    /// Code width D.
    pub code_dim: usize,
    pub beta: f64,
    /// Steps per encoder patch (P).
    pub patch_len: usize,
    /// Steps covered by one token (W).
    pub wave_len: usize,
    /// Channel width of the conv stack.
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: 128,
            code_dim: 64,
            beta: 0.25,
            patch_len: 16,
            wave_len: 8,
            hidden: 64,
            blocks: 3,
            kernel: 3,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook needs at least 2 entries".into()));
        }
        if self.code_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("code width and hidden width must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.wave_len == 0 || self.patch_len == 0 || !self.patch_len.is_multiple_of(self.wave_len) {
            return Err(Error::Config(format!(
                "patch length {} must be a positive multiple of wave length {}",
                self.patch_len, self.wave_len
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("conv kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> PatchLayout {
        PatchLayout {
            patch_len: self.patch_len,
            wave_len: self.wave_len,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub patch_len: usize,
    pub wave_len: usize,
}

impl PatchLayout {
    pub fn tokens_per_patch(&self) -> usize {
        self.patch_len / self.wave_len
    }

    /// `⌈L/P⌉ · (P/W)`, which is `L/W` whenever `P | L`.
    pub fn token_count(&self, len: usize) -> usize {
        len.div_ceil(self.patch_len) * self.tokens_per_patch()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 || !len.is_multiple_of(self.patch_len) {
            return Err(Error::Patching {
                len,
                patch: self.patch_len,
            });
        }
        Ok(())
    }
}

/// Token ids over the codebook vocabulary, possibly containing [`MASK`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub layout: PatchLayout,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, layout: PatchLayout) -> Self {
        Self { ids, layout }
    }

    pub fn masked(len: usize, layout: PatchLayout) -> Self {
        Self {
            ids: vec![MASK; len],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_mask(&self) -> bool {
        self.ids.contains(&MASK)
    }

    pub fn mask_count(&self) -> usize {
        self.ids.iter().filter(|&&i| i == MASK).count()
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        for &id in &self.ids {
            if id != MASK && id >= vocab {
                return Err(Error::Vocabulary { id, size: vocab });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decoder {
    History,
    Future,
}

impl Decoder {
    fn prefix(self) -> &'static str {
        match self {
            Decoder::History => "tokenizer.dec_h",
            Decoder::Future => "tokenizer.dec_f",
        }
    }
}

/// Shared tokenizer parameters: codebook, transform, conv stacks.
pub fn init_params<R: Rng>(store: &mut ParamStore, cfg: &TokenizerConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let (k, d, h) = (cfg.codebook_size, cfg.code_dim, cfg.hidden);
    store.insert(CODEBOOK_E, init::uniform(&[k, d], 1.0 / k as f64, rng))?;
    let mut m = init::normal(&[d, d], 0.01, rng);
    for i in 0..d {
        m.set(i, i, m.get(i, i) + 1.0);
    }
    store.insert(CODEBOOK_M, m)?;
    for b in 0..cfg.blocks {
        layers::conv_params(store, &format!("{PREFIX}.enc.block{b}"), h, h, cfg.kernel, rng)?;
    }
    layers::conv_params(store, &format!("{PREFIX}.enc.patch"), h, d, cfg.wave_len, rng)?;
    for dec in [Decoder::History, Decoder::Future] {
        let p = dec.prefix();
        layers::linear_params(store, &format!("{p}.up"), d, cfg.wave_len * h, rng)?;
        for b in 0..cfg.blocks {
            layers::conv_params(store, &format!("{p}.block{b}"), h, h, cfg.kernel, rng)?;
        }
    }
    Ok(())
}

/// Per-domain input and output adapters mapping `C` channels to and from
/// the shared conv width.
pub fn add_domain<R: Rng>(store: &mut ParamStore, cfg: &TokenizerConfig, domain: &str, channels: usize, rng: &mut R) -> Result<()> {
    if channels == 0 {
        return Err(Error::Config(format!("domain `{domain}` has no channels")));
    }
    layers::conv_params(store, &format!("{PREFIX}.enc.in.{domain}"), channels, cfg.hidden, 1, rng)?;
    for dec in [Decoder::History, Decoder::Future] {
        layers::conv_params(store, &format!("{}.out.{domain}", dec.prefix()), cfg.hidden, channels, 1, rng)?;
    }
    Ok(())
}

fn residual_stack(g: &mut Graph, store: &ParamStore, cfg: &TokenizerConfig, prefix: &str, mut h: Var) -> Result<Var> {
    for b in 0..cfg.blocks {
        let c = layers::conv_fwd(g, store, &format!("{prefix}.block{b}"), h, 1, cfg.kernel / 2)?;
        let c = g.gelu(c);
        h = g.add(h, c)?;
    }
    Ok(h)
}

/// `[L×C]` normalized trend to `[L/W × D]` features.
pub fn encode(g: &mut Graph, store: &ParamStore, cfg: &TokenizerConfig, domain: &str, trend: Var) -> Result<Var> {
    let (len, _) = g.value(trend).expect_2d("encode")?;
    cfg.layout().check_len(len)?;
    let x = g.transpose(trend)?;
    let h = layers::conv_fwd(g, store, &format!("{PREFIX}.enc.in.{domain}"), x, 1, 0)?;
    let h = residual_stack(g, store, cfg, &format!("{PREFIX}.enc"), h)?;
    let z = layers::conv_fwd(g, store, &format!("{PREFIX}.enc.patch"), h, cfg.wave_len, 0)?;
    g.transpose(z)
}

/// `Ê = E · M`.
pub fn transformed_codebook(g: &mut Graph, store: &ParamStore) -> Result<Var> {
    let e = g.param(store, CODEBOOK_E)?;
    let m = g.param(store, CODEBOOK_M)?;
    g.matmul(e, m)
}

pub fn transformed_codebook_value(store: &ParamStore) -> Result<Tensor> {
    store.value(CODEBOOK_E)?.matmul(store.value(CODEBOOK_M)?)
}

/// Index of the nearest row of `e_hat` for every row of `z` in squared
/// Euclidean distance; ties go to the smaller index.
pub fn nearest_codes(z: &Tensor, e_hat: &Tensor) -> Result<Vec<usize>> {
    let (n, d) = z.expect_2d("quantize")?;
    let (k, d2) = e_hat.expect_2d("quantize")?;
    if d != d2 {
        return Err(Error::dim("quantize", z.shape(), e_hat.shape()));
    }
    if !z.is_finite() {
        return Err(Error::Numeric("encoder features are not finite".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let zi = z.row(i);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..k {
            let dist: f64 = zi.iter().zip(e_hat.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

pub struct QuantizeResult {
    pub tokens: Vec<usize>,
    pub z_e: Var,
    /// Rows of `Ê` on the forward pass; gradients pass straight to `z_e`.
    pub z_q: Var,
    /// `mean‖sg[z] − ê‖² + β · mean‖z − sg[ê]‖²`.
    pub codebook_loss: Var,
}

pub fn quantize(g: &mut Graph, z_e: Var, e_hat: Var, beta: f64) -> Result<QuantizeResult> {
    let tokens = nearest_codes(g.value(z_e), g.value(e_hat))?;
    let tokens = g.freeze_indices(tokens)?;
    let chosen = g.gather_rows(e_hat, &tokens)?;
    let z_q = g.straight_through(z_e, chosen)?;
    let z_sg = g.stop_gradient(z_e)?;
    let chosen_sg = g.stop_gradient(chosen)?;
    let codebook_term = g.mse(z_sg, chosen)?;
    let commit_term = g.mse(z_e, chosen_sg)?;
    let commit_term = g.scale(commit_term, beta);
    let codebook_loss = g.add(codebook_term, commit_term)?;
    Ok(QuantizeResult {
        tokens,
        z_e,
        z_q,
        codebook_loss,
    })
}

/// Quantized codes `[n×D]` back to a normalized `[n·W × C]` trend.
pub fn decode(g: &mut Graph, store: &ParamStore, cfg: &TokenizerConfig, which: Decoder, domain: &str, z_q: Var) -> Result<Var> {
    let (n, d) = g.value(z_q).expect_2d("decode")?;
    if d != cfg.code_dim {
        return Err(Error::dim("decode", g.shape(z_q), &[n, cfg.code_dim]));
    }
    let p = which.prefix();
    let up = layers::linear_fwd(g, store, &format!("{p}.up"), z_q)?;
    let steps = g.reshape(up, &[n * cfg.wave_len, cfg.hidden])?;
    let h = g.transpose(steps)?;
    let h = g.gelu(h);
    let h = residual_stack(g, store, cfg, p, h)?;
    let out = layers::conv_fwd(g, store, &format!("{p}.out.{domain}"), h, 1, 0)?;
    g.transpose(out)
}

/// History reconstruction from quantized codes.
pub fn decode_history(g: &mut Graph, store: &ParamStore, cfg: &TokenizerConfig, domain: &str, z_q: Var) -> Result<Var> {
    decode(g, store, cfg, Decoder::History, domain, z_q)
}

/// Future decoding. The codes are detached first so that nothing trained
/// through this decoder reaches the codebook, transform, or encoder.
pub fn decode_future(g: &mut Graph, store: &ParamStore, cfg: &TokenizerConfig, domain: &str, z_q: Var) -> Result<Var> {
    let detached = g.stop_gradient(z_q)?;
    decode(g, store, cfg, Decoder::Future, domain, detached)
}

/// History reconstruction + future trend + codebook terms, unweighted.
pub fn trend_tokenizer_loss(g: &mut Graph, history: Var, future: Var, codebook: Var) -> Result<Var> {
    let s = g.add(history, future)?;
    g.add(s, codebook)
}

/// Tokens of a normalized `[L×C]` trend under frozen parameters.
pub fn tokenize(store: &ParamStore, cfg: &TokenizerConfig, domain: &str, trend: &Tensor) -> Result<TokenSequence> {
    let mut g = Graph::new();
    let x = g.constant(trend.clone());
    let z = encode(&mut g, store, cfg, domain, x)?;
    let e_hat = transformed_codebook_value(store)?;
    let ids = nearest_codes(g.value(z), &e_hat)?;
    Ok(TokenSequence::new(ids, cfg.layout()))
}

/// Normalized trend decoded from token ids under frozen parameters.
pub fn decode_tokens(store: &ParamStore, cfg: &TokenizerConfig, which: Decoder, domain: &str, tokens: &TokenSequence) -> Result<Tensor> {
    tokens.validate(cfg.codebook_size)?;
    if tokens.has_mask() {
        return Err(Error::Precondition("cannot decode masked tokens".into()));
    }
    let mut g = Graph::new();
    let e_hat = g.constant(transformed_codebook_value(store)?);
    let z_q = g.gather_rows(e_hat, &tokens.ids)?;
    let out = decode(&mut g, store, cfg, which, domain, z_q)?;
    Ok(g.value(out).clone())
}

/// Vocabulary mask keeping tokens whose share of `counts` is at least
/// `min_fraction`. A zero threshold keeps every token.
pub fn abandon_rare_tokens(counts: &[usize], min_fraction: f64) -> Vec<bool> {
    let total: usize = counts.iter().sum();
    if total == 0 || min_fraction <= 0.0 {
        return vec![true; counts.len()];
    }
    let mut keep: Vec<bool> = counts
        .iter()
        .map(|&c| c as f64 / total as f64 >= min_fraction)
        .collect();
    if !keep.iter().any(|&k| k) {
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        keep[best] = true;
    }
    keep
}
