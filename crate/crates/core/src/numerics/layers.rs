//! Parameterized building blocks. Each block owns a name prefix in the
//! [`ParamStore`]; `*_params` registers the tensors, the forward functions
//! look them up by the same prefix.

use rand::Rng;

use super::params::init;
use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// `y = x·W + b` for `x[n×d_in]`, `W[d_in×d_out]`, `b[d_out]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(w).to_vec();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::dim("linear", &xs, &ws));
    }
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub fn linear_params<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{prefix}.w"), init::fan_in(&[d_in, d_out], d_in, rng))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d_out]))
}

pub fn linear_fwd(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    linear(g, x, w, b)
}

/// Conv layer `[C_in×L] → [C_out×L_out]` with a per-output-channel bias.
pub fn conv_params<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(
        format!("{prefix}.w"),
        init::fan_in(&[c_out, c_in, kernel], c_in * kernel, rng),
    )?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[c_out]))
}

pub fn conv_fwd(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.conv1d(x, w, stride, padding)?;
    g.add_col(y, b)
}

pub fn layer_norm_params(store: &mut ParamStore, prefix: &str, width: usize) -> Result<()> {
    store.insert(format!("{prefix}.g"), Tensor::full(&[width], 1.0))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[width]))
}

pub fn layer_norm_fwd(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(store, &format!("{prefix}.g"))?;
    let beta = g.param(store, &format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta)
}

/// Shape of a transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub width: usize,
    pub heads: usize,
    pub ff: usize,
}

impl BlockDims {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "transformer width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.ff == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        Ok(())
    }
}

pub fn attention_block_params<R: Rng>(store: &mut ParamStore, prefix: &str, dims: BlockDims, rng: &mut R) -> Result<()> {
    dims.validate()?;
    let d = dims.width;
    layer_norm_params(store, &format!("{prefix}.ln1"), d)?;
    for name in ["q", "k", "v", "o"] {
        linear_params(store, &format!("{prefix}.{name}"), d, d, rng)?;
    }
    layer_norm_params(store, &format!("{prefix}.ln2"), d)?;
    linear_params(store, &format!("{prefix}.ff1"), d, dims.ff, rng)?;
    linear_params(store, &format!("{prefix}.ff2"), dims.ff, d, rng)
}

/// Output of one attention block plus its per-head attention matrices.
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Pre-norm block: full (bidirectional) multi-head self-attention and a
/// GELU feed-forward sublayer, each wrapped in a residual connection.
pub fn attention_block(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var, heads: usize) -> Result<AttentionOutput> {
    let (n, d) = g.value(x).expect_2d("attention_block")?;
    if n == 0 {
        return Err(Error::dim("attention_block", &[n, d], &[1, d]));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let h = layer_norm_fwd(g, store, &format!("{prefix}.ln1"), x)?;
    let q = linear_fwd(g, store, &format!("{prefix}.q"), h)?;
    let k = linear_fwd(g, store, &format!("{prefix}.k"), h)?;
    let v = linear_fwd(g, store, &format!("{prefix}.v"), h)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = g.col_slice(q, head * dh, dh)?;
        let kh = g.col_slice(k, head * dh, dh)?;
        let vh = g.col_slice(v, head * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax_rows(scores)?;
        outs.push(g.matmul(a, vh)?);
        weights.push(a);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    let attn = linear_fwd(g, store, &format!("{prefix}.o"), cat)?;
    let x1 = g.add(x, attn)?;
    let h2 = layer_norm_fwd(g, store, &format!("{prefix}.ln2"), x1)?;
    let f = linear_fwd(g, store, &format!("{prefix}.ff1"), h2)?;
    let f = g.gelu(f);
    let f = linear_fwd(g, store, &format!("{prefix}.ff2"), f)?;
    let out = g.add(x1, f)?;
    Ok(AttentionOutput { out, weights })
}

/// Sinusoidal absolute positional encodings `[n×d]`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(n, d, |pos, i| {
        let pair = (i / 2) as f64;
        let rate = 1.0 / 10_000f64.powf(2.0 * pair / d as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
