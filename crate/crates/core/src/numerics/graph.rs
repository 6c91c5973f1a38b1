//! Reverse-mode differentiation over a recorded node list.
//!
//! A [`Graph`] is built fresh for each forward pass. Parameters enter as
//! leaves through [`Graph::param`]; after [`Graph::backward`] their gradients
//! are pushed back into the [`ParamStore`] with [`Graph::accumulate_into`].
//!
//! Stop-gradient and straight-through nodes can be *recorded* and later
//! *replayed*: a replaying graph substitutes the recorded constants (and
//! recorded token choices) so that the replayed forward function is exactly
//! the smooth surrogate whose gradient `backward` computes. Finite-difference
//! checks of losses containing stop-gradients rely on this.

use std::collections::HashMap;

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A value captured at a freeze point.
#[derive(Clone, Debug, PartialEq)]
pub enum Frozen {
    Tensor(Tensor),
    Indices(Vec<usize>),
}

#[derive(Debug, Default)]
enum FreezeMode {
    #[default]
    Off,
    Record(Vec<Frozen>),
    Replay {
        items: Vec<Frozen>,
        cursor: usize,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Gelu(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    ColSlice {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    StraightThrough(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Tensor,
        total: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    freeze: FreezeMode,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records every freeze point for later replay.
    pub fn recording() -> Self {
        Self {
            freeze: FreezeMode::Record(Vec::new()),
            ..Self::default()
        }
    }

    /// A graph that substitutes previously recorded freeze points.
    pub fn replaying(items: Vec<Frozen>) -> Self {
        Self {
            freeze: FreezeMode::Replay { items, cursor: 0 },
            ..Self::default()
        }
    }

    /// Recorded freeze points (empty unless built with [`Graph::recording`]).
    pub fn take_frozen(&mut self) -> Vec<Frozen> {
        match std::mem::take(&mut self.freeze) {
            FreezeMode::Record(items) => items,
            _ => Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn next_frozen(&mut self) -> Result<Frozen> {
        match &mut self.freeze {
            FreezeMode::Replay { items, cursor } => {
                let item = items
                    .get(*cursor)
                    .cloned()
                    .ok_or_else(|| Error::Numeric("replay ran past recorded freeze points".into()))?;
                *cursor += 1;
                Ok(item)
            }
            _ => unreachable!("next_frozen outside replay"),
        }
    }

    fn is_replay(&self) -> bool {
        matches!(self.freeze, FreezeMode::Replay { .. })
    }

    fn record(&mut self, item: Frozen) {
        if let FreezeMode::Record(items) = &mut self.freeze {
            items.push(item);
        }
    }

    /// Value of `x` with no gradient path.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let value = if self.is_replay() {
            match self.next_frozen()? {
                Frozen::Tensor(t) if t.shape() == self.shape(x) => t,
                _ => return Err(Error::Numeric("replayed stop-gradient does not match".into())),
            }
        } else {
            let t = self.value(x).clone();
            self.record(Frozen::Tensor(t.clone()));
            t
        };
        Ok(self.constant(value))
    }

    /// Discrete choices (token ids) that must stay fixed under replay.
    pub fn freeze_indices(&mut self, idx: Vec<usize>) -> Result<Vec<usize>> {
        if self.is_replay() {
            match self.next_frozen()? {
                Frozen::Indices(i) => Ok(i),
                _ => Err(Error::Numeric("replayed indices do not match".into())),
            }
        } else {
            self.record(Frozen::Indices(idx.clone()));
            Ok(idx)
        }
    }

    /// Forward value of `target`, backward identity into `source`.
    pub fn straight_through(&mut self, source: Var, target: Var) -> Result<Var> {
        if self.shape(source) != self.shape(target) {
            return Err(Error::dim("straight_through", self.shape(source), self.shape(target)));
        }
        let value = if self.is_replay() {
            match self.next_frozen()? {
                Frozen::Tensor(offset) => self.value(source).zip_map(&offset, |z, o| z + o)?,
                _ => return Err(Error::Numeric("replayed straight-through does not match".into())),
            }
        } else {
            if matches!(self.freeze, FreezeMode::Record(_)) {
                let offset = self.value(target).zip_map(self.value(source), |t, z| t - z)?;
                self.record(Frozen::Tensor(offset));
            }
            self.value(target).clone()
        };
        let rg = self.rg(&[source]);
        Ok(self.push(value, Op::StraightThrough(source), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    fn row_vector_check(&self, op: &'static str, x: Var, b: Var) -> Result<(usize, usize)> {
        let (n, m) = self.value(x).expect_2d(op)?;
        if self.value(b).numel() != m {
            return Err(Error::dim(op, self.shape(x), self.shape(b)));
        }
        Ok((n, m))
    }

    /// `x[n×m] + b[m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, m) = self.row_vector_check("add_row", x, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bv[i % m];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::AddRow(x, b), rg))
    }

    /// `x[n×m] ⊙ s[m]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, s: Var) -> Result<Var> {
        let (_, m) = self.row_vector_check("mul_row", x, s)?;
        let sv = self.value(s).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e *= sv[i % m];
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(v, Op::MulRow(x, s), rg))
    }

    /// `x[n×m] + b[n]` broadcast over columns.
    pub fn add_col(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).expect_2d("add_col")?;
        if self.value(b).numel() != n {
            return Err(Error::dim("add_col", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += bv[i / m];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(v, Op::AddCol(x, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `a[n×k] · b[m×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).expect_2d("matmul_bt")?;
        let (m, k2) = self.value(b).expect_2d("matmul_bt")?;
        if k != k2 {
            return Err(Error::dim("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let v = Tensor::new(vec![n, m], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMulBT(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.value(x).expect_2d("transpose")?;
        let v = self.value(x).transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        let rg = self.rg(&[x]);
        self.push(v, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        let rg = self.rg(&[x]);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        let rg = self.rg(&[x]);
        self.push(v, Op::Square(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(v, Op::Mean(x), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let s = self.square(d);
        Ok(self.mean(s))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).expect_2d("softmax_rows")?;
        let mut v = self.value(x).clone();
        for i in 0..n {
            softmax_in_place(&mut v.data_mut()[i * m..(i + 1) * m]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SoftmaxRows(x), rg))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of width m.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, m) = self.row_vector_check("layer_norm", x, gamma)?;
        self.row_vector_check("layer_norm", x, beta)?;
        let xv = self.value(x);
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut xhat.data_mut()[i * m..(i + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mu) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for (k, e) in out.data_mut().iter_mut().enumerate() {
            *e = *e * g[k % m] + b[k % m];
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Cross-correlation of `x[C_in×L]` with `w[C_out×C_in×k]`, zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (cin, len) = self.value(x).expect_2d("conv1d")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 3 || ws[1] != cin {
            return Err(Error::dim("conv1d", self.shape(x), &ws));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be positive".into()));
        }
        let (cout, k) = (ws[0], ws[2]);
        let padded = len + 2 * padding;
        if k > padded {
            return Err(Error::dim("conv1d", &[cin, padded], &ws));
        }
        let lout = (padded - k) / stride + 1;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            for c in 0..cin {
                let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                let xrow = &xd[c * len..(c + 1) * len];
                for t in 0..lout {
                    let base = (t * stride) as isize - padding as isize;
                    let mut acc = 0.0;
                    for (j, &wv) in wrow.iter().enumerate() {
                        let p = base + j as isize;
                        if p >= 0 && (p as usize) < len {
                            acc += wv * xrow[p as usize];
                        }
                    }
                    out[o * lout + t] += acc;
                }
            }
        }
        let v = Tensor::new(vec![cout, lout], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(v, Op::Conv1d { x, w, stride, padding }, rg))
    }

    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.value(x).expect_2d("col_slice")?;
        if start + len > m {
            return Err(Error::dim("col_slice", self.shape(x), &[start, len]));
        }
        let xv = self.value(x);
        let v = Tensor::from_fn(n, len, |i, j| xv.get(i, start + j));
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::ColSlice { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).expect_2d("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_2d("concat_cols")?;
            if r != n {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).data();
            for i in 0..n {
                data[i * total + off..i * total + off + w].copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let v = Tensor::new(vec![n, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != m || pv.ndim() > 2 {
                return Err(Error::dim("concat_rows", self.shape(parts[0]), pv.shape()));
            }
            rows += pv.numel() / m;
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::new(vec![rows, m], data)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows of `table` selected by `idx` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.value(table).expect_2d("gather_rows")?;
        let tv = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(Error::Vocabulary { id: i, size: n });
            }
            data.extend_from_slice(tv.row(i));
        }
        let v = Tensor::new(vec![idx.len(), m], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            v,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `−(1/Σw) Σᵢ wᵢ log softmax(logitsᵢ)[targetᵢ]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (n, v) = self.value(logits).expect_2d("softmax_cross_entropy")?;
        if targets.len() != n || weights.len() != n {
            return Err(Error::dim("softmax_cross_entropy", self.shape(logits), &[targets.len(), weights.len()]));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateBatch("no row carries loss weight".into()));
        }
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        for i in 0..n {
            let t = targets[i];
            if t >= v {
                return Err(Error::Vocabulary { id: t, size: v });
            }
            let row = &mut probs.data_mut()[i * v..(i + 1) * v];
            let logp = log_softmax_at(row, t);
            softmax_in_place(row);
            if weights[i] != 0.0 {
                loss -= weights[i] * logp;
            }
        }
        let value = Tensor::scalar(loss / total);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                total,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign_scaled(&g, 1.0),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.map(|x| x * c)),
            Op::AddRow(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.requires_grad(*b) {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for (k, &e) in g.data().iter().enumerate() {
                        db[k % m] += e;
                    }
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::new(shape, db)?);
                }
            }
            Op::MulRow(x, s) => {
                let m = g.cols();
                let sv = self.value(*s).data();
                if self.requires_grad(*x) {
                    let mut dx = g.clone();
                    for (k, e) in dx.data_mut().iter_mut().enumerate() {
                        *e *= sv[k % m];
                    }
                    self.acc(grads, *x, dx);
                }
                if self.requires_grad(*s) {
                    let xv = self.value(*x).data();
                    let mut ds = vec![0.0; m];
                    for (k, &e) in g.data().iter().enumerate() {
                        ds[k % m] += e * xv[k];
                    }
                    let shape = self.shape(*s).to_vec();
                    self.acc(grads, *s, Tensor::new(shape, ds)?);
                }
            }
            Op::AddCol(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.requires_grad(*b) {
                    let m = g.cols();
                    let n = g.rows();
                    let db: Vec<f64> = (0..n).map(|i| g.data()[i * m..(i + 1) * m].iter().sum()).collect();
                    let shape = self.shape(*b).to_vec();
                    self.acc(grads, *b, Tensor::new(shape, db)?);
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; n * k];
                    matmul_bt_into(g.data(), self.value(*b).data(), &mut da, n, m, k);
                    self.acc(grads, *a, Tensor::new(vec![n, k], da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * m];
                    matmul_at_into(self.value(*a).data(), g.data(), &mut db, n, k, m);
                    self.acc(grads, *b, Tensor::new(vec![k, m], db)?);
                }
            }
            Op::MatMulBT(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; n * k];
                    matmul_into(g.data(), self.value(*b).data(), &mut da, n, m, k);
                    self.acc(grads, *a, Tensor::new(vec![n, k], da)?);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; m * k];
                    matmul_at_into(g.data(), self.value(*a).data(), &mut db, n, m, k);
                    self.acc(grads, *b, Tensor::new(vec![m, k], db)?);
                }
            }
            Op::Transpose(x) => self.acc(grads, *x, g.transpose()),
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(grads, *x, g.reshape(&shape)?);
            }
            Op::Gelu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * gelu_grad(xv))?;
                self.acc(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.acc(grads, *x, d);
            }
            Op::Square(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| 2.0 * gv * xv)?;
                self.acc(grads, *x, d);
            }
            Op::Sum(x) => {
                let s = g.item();
                self.acc(grads, *x, Tensor::full(self.shape(*x), s));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                let s = g.item() / n;
                self.acc(grads, *x, Tensor::full(self.shape(*x), s));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let m = y.cols();
                let mut dx = g.clone();
                for (gi, yi) in dx.data_mut().chunks_mut(m).zip(y.data().chunks(m)) {
                    let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                    for (e, &yv) in gi.iter_mut().zip(yi) {
                        *e = yv * (*e - dot);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let m = g.cols();
                let gv = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let mut dg = vec![0.0; m];
                    for (k, (&e, &h)) in g.data().iter().zip(xhat.data()).enumerate() {
                        dg[k % m] += e * h;
                    }
                    let shape = self.shape(*gamma).to_vec();
                    self.acc(grads, *gamma, Tensor::new(shape, dg)?);
                }
                if self.requires_grad(*beta) {
                    let mut db = vec![0.0; m];
                    for (k, &e) in g.data().iter().enumerate() {
                        db[k % m] += e;
                    }
                    let shape = self.shape(*beta).to_vec();
                    self.acc(grads, *beta, Tensor::new(shape, db)?);
                }
                if self.requires_grad(*x) {
                    let mut dx = Tensor::zeros(g.shape());
                    let mf = m as f64;
                    for (i, &is) in inv_std.iter().enumerate() {
                        let grow = &g.data()[i * m..(i + 1) * m];
                        let hrow = &xhat.data()[i * m..(i + 1) * m];
                        let dxhat: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        let out = &mut dx.data_mut()[i * m..(i + 1) * m];
                        for j in 0..m {
                            out[j] = is / mf * (mf * dxhat[j] - s1 - hrow[j] * s2);
                        }
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Conv1d { x, w, stride, padding } => {
                let (cin, len) = (self.shape(*x)[0], self.shape(*x)[1]);
                let ws = self.shape(*w);
                let (cout, k) = (ws[0], ws[2]);
                let lout = g.cols();
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let gd = g.data();
                let need_x = self.requires_grad(*x);
                let need_w = self.requires_grad(*w);
                let mut dx = vec![0.0; if need_x { cin * len } else { 0 }];
                let mut dw = vec![0.0; if need_w { cout * cin * k } else { 0 }];
                for o in 0..cout {
                    let grow = &gd[o * lout..(o + 1) * lout];
                    for c in 0..cin {
                        let widx = (o * cin + c) * k;
                        for (t, &gv) in grow.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let base = (t * stride) as isize - *padding as isize;
                            for j in 0..k {
                                let p = base + j as isize;
                                if p >= 0 && (p as usize) < len {
                                    let p = p as usize;
                                    if need_w {
                                        dw[widx + j] += gv * xd[c * len + p];
                                    }
                                    if need_x {
                                        dx[c * len + p] += gv * wd[widx + j];
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.acc(grads, *x, Tensor::new(vec![cin, len], dx)?);
                }
                if need_w {
                    self.acc(grads, *w, Tensor::new(ws.to_vec(), dw)?);
                }
            }
            Op::ColSlice { x, start } => {
                let (n, m) = (self.shape(*x)[0], self.shape(*x)[1]);
                let w = g.cols();
                let mut dx = Tensor::zeros(&[n, m]);
                for i in 0..n {
                    for j in 0..w {
                        dx.set(i, start + j, g.get(i, j));
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let d = Tensor::from_fn(n, w, |i, j| g.data()[i * total + off + j]);
                        self.acc(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let k = self.value(p).numel();
                    if self.requires_grad(p) {
                        let shape = self.shape(p).to_vec();
                        self.acc(grads, p, Tensor::new(shape, g.data()[off..off + k].to_vec())?);
                    }
                    off += k;
                }
            }
            Op::GatherRows { table, idx } => {
                let shape = self.shape(*table).to_vec();
                let m = shape[1];
                let mut dt = Tensor::zeros(&shape);
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * m..(r + 1) * m];
                    for (d, &s) in dt.data_mut()[i * m..(i + 1) * m].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                self.acc(grads, *table, dt);
            }
            Op::StraightThrough(src) => self.acc(grads, *src, g.clone()),
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
                probs,
                total,
            } => {
                let v = probs.cols();
                let scale = g.item() / total;
                let mut d = probs.clone();
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let row = &mut d.data_mut()[i * v..(i + 1) * v];
                    if w == 0.0 {
                        row.iter_mut().for_each(|e| *e = 0.0);
                    } else {
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|e| *e *= w * scale);
                    }
                }
                self.acc(grads, *logits, d);
            }
        }
        Ok(())
    }

    /// Gradients of every parameter leaf touched by this graph.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (name.clone(), g)
            })
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Adds `scale ×` this graph's parameter gradients into `store`.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParamStore, scale: f64) -> Result<()> {
        for (name, g) in self.param_grads(grads) {
            store.accumulate_grad(&name, &g, scale)?;
        }
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for e in row.iter_mut() {
        *e = (*e - max).exp();
        sum += *e;
    }
    for e in row.iter_mut() {
        *e /= sum;
    }
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|e| (e - max).exp()).sum::<f64>().ln() + max;
    row[t] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t).unwrap();
        s
    }

    #[test]
    fn param_leaf_is_shared() {
        let s = store_with("w", Tensor::scalar(2.0));
        let mut g = Graph::new();
        let a = g.param(&s, "w").unwrap();
        let b = g.param(&s, "w").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_rule() {
        let mut s = store_with("w", Tensor::vector(vec![3.0, -1.0]));
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        g.accumulate_into(&grads, &mut s, 1.0).unwrap();
        assert_eq!(s.get("w").unwrap().grad.data(), &[6.0, -2.0]);
    }

    #[test]
    fn stop_gradient_blocks() {
        let mut s = store_with("w", Tensor::vector(vec![1.5]));
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let c = g.stop_gradient(w).unwrap();
        let p = g.mul(w, c).unwrap();
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        g.accumulate_into(&grads, &mut s, 1.0).unwrap();
        assert_eq!(s.get("w").unwrap().grad.data(), &[1.5]);
    }

    #[test]
    fn replay_reuses_frozen_values() {
        let s = store_with("w", Tensor::vector(vec![2.0]));
        let mut g = Graph::recording();
        let w = g.param(&s, "w").unwrap();
        g.stop_gradient(w).unwrap();
        let frozen = g.take_frozen();
        let s2 = store_with("w", Tensor::vector(vec![5.0]));
        let mut g2 = Graph::replaying(frozen);
        let w2 = g2.param(&s2, "w").unwrap();
        let c = g2.stop_gradient(w2).unwrap();
        assert_eq!(g2.value(c).data(), &[2.0]);
    }

    #[test]
    fn cross_entropy_ignores_zero_weight_rows() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![5.0, -3.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![-9.0, 2.0]]).unwrap());
        let la = g.softmax_cross_entropy(a, &[0, 0], &[1.0, 0.0]).unwrap();
        let lb = g.softmax_cross_entropy(b, &[0, 0], &[1.0, 0.0]).unwrap();
        assert_eq!(g.value(la).item(), g.value(lb).item());
        assert!((g.value(la).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            g.softmax_cross_entropy(a, &[0, 1], &[0.0, 0.0]),
            Err(Error::DegenerateBatch(_))
        ));
    }
}
