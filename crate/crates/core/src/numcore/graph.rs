//! Reverse-mode tape over the kernels in [`ops`](super::ops).
//!
//! A [`Graph`] borrows a parameter slice, records every operation in
//! creation order, and replays the recorded backward kernels in reverse.
//! Built with `record = false` it keeps no backward caches, which is the
//! inference mode used for decoding and profiling.

use std::sync::Arc;

use super::bitmatrix::BitMatrix;
use super::ops::{self, dot, matmul_into, matmul_nt_into, matmul_tn_into, CrossEntropyCache, LayerNormCache};
use super::tensor::{Param, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Masked multi-head attention inputs that stay fixed across the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub mask: Arc<BitMatrix>,
    /// Mask row of the first query row.
    pub row_offset: usize,
    pub n_heads: usize,
}

enum Op {
    Constant,
    Param(usize),
    Gather { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: Option<LayerNormCache> },
    Gelu(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Option<Vec<Scalar>> },
    CrossEntropy { logits: Var, cache: Option<CrossEntropyCache> },
    Mean(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Running measurements of a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    /// Largest key count seen by any attention call.
    pub peak_attention_width: usize,
    /// Activation scalars currently held (parameters excluded, backward caches included).
    pub live_scalars: usize,
}

pub struct Graph<'p> {
    params: &'p [Param],
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
    record: bool,
    stats: GraphStats,
    budget: Option<usize>,
}

/// Gradients produced by [`Graph::backward`], indexed like the parameter slice.
pub struct ParamGrads {
    pub grads: Vec<Option<Tensor>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Param], record: bool) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::new(),
            record,
            stats: GraphStats::default(),
            budget: None,
        }
    }

    /// Makes fallible operations fail with [`Error::Capacity`] once the live
    /// scalar count exceeds `limit`.
    pub fn with_budget(mut self, limit: usize) -> Self {
        self.budget = Some(limit);
        self
    }

    fn check_budget(&self) -> Result<()> {
        match self.budget {
            Some(limit) if self.stats.live_scalars > limit => {
                Err(Error::Capacity { requested: self.stats.live_scalars, capacity: limit })
            }
            _ => Ok(()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn stats(&self) -> GraphStats {
        self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(i) => &self.params[*i].tensor,
            _ => self.nodes[v.0].value.as_ref().expect("non-parameter node holds a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.stats.live_scalars += value.len();
        self.nodes.push(Node { op, value: Some(value), requires_grad: requires_grad && self.record });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is never computed.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t.detached(), false)
    }

    /// Leaf for parameter `i`. Repeated calls return the same node.
    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.param_nodes[i] {
            return v;
        }
        let trainable = self.params[i].tensor.grad().is_some();
        self.nodes.push(Node { op: Op::Param(i), value: None, requires_grad: trainable && self.record });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[i] = Some(v);
        v
    }

    /// Rows `ids` of the matrix `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check_budget()?;
        let t = self.value(table);
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::InvalidInput(format!("row {id} outside table of {} rows", t.rows())));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.rg(table);
        Ok(self.push(Op::Gather { table, ids: ids.to_vec() }, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_budget()?;
        let (x, y) = (self.value(a), self.value(b));
        if x.len() != y.len() || x.rows() != y.rows() {
            return Err(Error::Shape(format!("add: {:?} vs {:?}", x.dims(), y.dims())));
        }
        let mut out = x.detached();
        for (o, &v) in out.data_mut().iter_mut().zip(y.data()) {
            *o += v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// `x + b` with the vector `b` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_budget()?;
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        if bv.len() != c {
            return Err(Error::Shape(format!("add_bias: width {c}, bias {}", bv.len())));
        }
        let mut out = xv.detached();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &v) in row.iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Op::AddBias(x, b), out, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_budget()?;
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_budget()?;
        let (x, y) = (self.value(a), self.value(b));
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        if y.cols() != k {
            return Err(Error::Shape(format!("matmul_nt: {m}×{k} · ({n}×{})ᵀ", y.cols())));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(x.data(), y.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMulNT(a, b), out, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Scalar) -> Result<Var> {
        self.check_budget()?;
        let (out, cache) = ops::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let cache = if rg {
            self.stats.live_scalars += cache.xhat.len() + cache.rstd.len();
            Some(cache)
        } else {
            None
        };
        Ok(self.push(Op::LayerNorm { x, gamma, beta, cache }, out, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = ops::gelu(self.value(x));
        let rg = self.rg(x);
        self.push(Op::Gelu(x), out, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_budget()?;
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check_budget()?;
        let out = self.value(x).slice_rows(start, end)?;
        let rg = self.rg(x);
        Ok(self.push(Op::SliceRows { x, start }, out, rg))
    }

    /// Scaled dot-product attention per head, with the disallowed entries of
    /// `spec.mask` excluded from the softmax.
    ///
    /// `q` holds mask rows `row_offset..row_offset + q.rows()`; `k` and `v` hold
    /// every mask column in order.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        self.check_budget()?;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d) = (qv.rows(), qv.cols());
        let nk = kv.rows();
        let mask = &spec.mask;
        if kv.cols() != d || vv.cols() != d || vv.rows() != nk {
            return Err(Error::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}",
                qv.dims(),
                kv.dims(),
                vv.dims()
            )));
        }
        if mask.cols() != nk || spec.row_offset + nq > mask.rows() {
            return Err(Error::Shape(format!(
                "attention: mask {}×{} for {} queries at row {} over {} keys",
                mask.rows(),
                mask.cols(),
                nq,
                spec.row_offset,
                nk
            )));
        }
        if spec.n_heads == 0 || d % spec.n_heads != 0 {
            return Err(Error::Shape(format!("attention: width {d} not divisible by {} heads", spec.n_heads)));
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let dh = d / spec.n_heads;
        let scale = 1.0 / (dh as Scalar).sqrt();
        let mut out = vec![0.0; nq * d];
        let mut probs = if rg { Some(vec![0.0; spec.n_heads * nq * nk]) } else { None };
        let mut row_p = vec![0.0; nk];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..spec.n_heads {
            let hs = h * dh;
            for r in 0..nq {
                let mrow = spec.row_offset + r;
                let qr = &qd[r * d + hs..r * d + hs + dh];
                let mut mx = Scalar::NEG_INFINITY;
                for c in 0..nk {
                    if mask.get(mrow, c) {
                        let s = dot(qr, &kd[c * d + hs..c * d + hs + dh]) * scale;
                        row_p[c] = s;
                        if s > mx {
                            mx = s;
                        }
                    }
                }
                if mx == Scalar::NEG_INFINITY {
                    return Err(Error::InvalidInput(format!("attention: mask row {mrow} allows no keys")));
                }
                let mut sum = 0.0;
                for c in 0..nk {
                    if mask.get(mrow, c) {
                        let e = (row_p[c] - mx).exp();
                        row_p[c] = e;
                        sum += e;
                    } else {
                        row_p[c] = 0.0;
                    }
                }
                let inv = 1.0 / sum;
                let orow = &mut out[r * d + hs..r * d + hs + dh];
                for c in 0..nk {
                    if mask.get(mrow, c) {
                        let p = row_p[c] * inv;
                        row_p[c] = p;
                        for (o, &x) in orow.iter_mut().zip(&vd[c * d + hs..c * d + hs + dh]) {
                            *o += p * x;
                        }
                    }
                }
                if let Some(pb) = probs.as_mut() {
                    pb[(h * nq + r) * nk..(h * nq + r + 1) * nk].copy_from_slice(&row_p);
                }
            }
        }
        self.stats.peak_attention_width = self.stats.peak_attention_width.max(nk);
        if let Some(p) = &probs {
            self.stats.live_scalars += p.len();
        }
        let out = Tensor::new(vec![nq, d], out)?;
        Ok(self.push(Op::Attention { q, k, v, spec, probs }, out, rg))
    }

    /// Mean masked negative log-likelihood; yields a one-element tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        self.check_budget()?;
        let (loss, cache) = ops::cross_entropy(self.value(logits), targets, mask)?;
        let rg = self.rg(logits);
        let out = Tensor::new(vec![1], vec![loss])?;
        let cache = if rg { Some(cache) } else { None };
        Ok(self.push(Op::CrossEntropy { logits, cache }, out, rg))
    }

    /// Mean of all entries; yields a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<Scalar>() / t.len() as Scalar;
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::new(vec![1], vec![m]).expect("scalar"), rg)
    }

    /// Backpropagates from the one-element node `loss`, returning gradients for trainable parameters.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        if !self.record {
            return Err(Error::State("backward on a graph built without recording".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<Scalar>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Param(_)) {
                grads[i] = Some(g);
            }
        }
        let mut out: Vec<Option<Tensor>> = vec![None; self.params.len()];
        for (pi, node) in self.param_nodes.iter().enumerate() {
            if let Some(v) = node {
                if v.0 < n {
                    if let Some(g) = grads[v.0].take() {
                        out[pi] = Some(Tensor::new(self.params[pi].tensor.dims().to_vec(), g)?);
                    }
                }
            }
        }
        Ok(ParamGrads { grads: out })
    }

    fn acc(&self, grads: &mut [Option<Vec<Scalar>>], v: Var, f: impl FnOnce(&mut [Scalar])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.value(v).len();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    fn backward_node(&self, i: usize, g: &[Scalar], grads: &mut [Option<Vec<Scalar>>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::Gather { table, ids } => {
                let d = self.value(*table).cols();
                self.acc(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &x) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.acc(grads, v, |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                let c = self.value(*b).len();
                self.acc(grads, *b, |gb| {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.acc(grads, *a, |ga| matmul_nt_into(g, bv.data(), ga, m, n, k));
                self.acc(grads, *b, |gb| matmul_tn_into(av.data(), g, gb, m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                self.acc(grads, *a, |ga| matmul_into(g, bv.data(), ga, m, n, k));
                self.acc(grads, *b, |gb| matmul_tn_into(g, av.data(), gb, m, n, k));
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let cache = cache.as_ref().ok_or_else(|| Error::State("layer_norm cache missing".into()))?;
                let gv = self.value(*gamma);
                let dy = Tensor::new(vec![cache.xhat.rows(), cache.xhat.cols()], g.to_vec())?;
                let (dx, dg, db) = ops::layer_norm_backward(cache, gv, &dy);
                self.acc(grads, *x, |o| o.iter_mut().zip(dx.data()).for_each(|(o, &v)| *o += v));
                self.acc(grads, *gamma, |o| o.iter_mut().zip(dg.data()).for_each(|(o, &v)| *o += v));
                self.acc(grads, *beta, |o| o.iter_mut().zip(db.data()).for_each(|(o, &v)| *o += v));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dy = Tensor::new(xv.dims().to_vec(), g.to_vec())?;
                let dx = ops::gelu_backward(xv, &dy);
                self.acc(grads, *x, |o| o.iter_mut().zip(dx.data()).for_each(|(o, &v)| *o += v));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |o| o.iter_mut().zip(&g[off..off + len]).for_each(|(o, &v)| *o += v));
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                let off = start * c;
                self.acc(grads, *x, |o| {
                    o[off..off + g.len()].iter_mut().zip(g).for_each(|(o, &v)| *o += v)
                });
            }
            Op::Attention { q, k, v, spec, probs } => {
                let probs = probs.as_ref().ok_or_else(|| Error::State("attention probabilities missing".into()))?;
                self.attention_backward(*q, *k, *v, spec, probs, g, grads);
            }
            Op::CrossEntropy { logits, cache } => {
                let cache = cache.as_ref().ok_or_else(|| Error::State("cross_entropy cache missing".into()))?;
                let dl = ops::cross_entropy_backward(cache, g[0]);
                self.acc(grads, *logits, |o| o.iter_mut().zip(dl.data()).for_each(|(o, &v)| *o += v));
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let s = g[0] / len as Scalar;
                self.acc(grads, *x, |o| o.iter_mut().for_each(|o| *o += s));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[Scalar],
        g: &[Scalar],
        grads: &mut [Option<Vec<Scalar>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (nq, d, nk) = (qv.rows(), qv.cols(), kv.rows());
        let dh = d / spec.n_heads;
        let scale = 1.0 / (dh as Scalar).sqrt();
        let mut dq = vec![0.0; nq * d];
        let mut dk = vec![0.0; nk * d];
        let mut dv = vec![0.0; nk * d];
        let mut dp = vec![0.0; nk];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..spec.n_heads {
            let hs = h * dh;
            for r in 0..nq {
                let mrow = spec.row_offset + r;
                let p = &probs[(h * nq + r) * nk..(h * nq + r + 1) * nk];
                let go = &g[r * d + hs..r * d + hs + dh];
                let mut inner = 0.0;
                for c in 0..nk {
                    if mask_allows(spec, mrow, c) {
                        dp[c] = dot(go, &vd[c * d + hs..c * d + hs + dh]);
                        inner += p[c] * dp[c];
                        for (o, &x) in dv[c * d + hs..c * d + hs + dh].iter_mut().zip(go) {
                            *o += p[c] * x;
                        }
                    }
                }
                let qr = &qd[r * d + hs..r * d + hs + dh];
                for c in 0..nk {
                    if mask_allows(spec, mrow, c) {
                        let ds = p[c] * (dp[c] - inner) * scale;
                        if ds != 0.0 {
                            let kr = &kd[c * d + hs..c * d + hs + dh];
                            for (o, &x) in dq[r * d + hs..r * d + hs + dh].iter_mut().zip(kr) {
                                *o += ds * x;
                            }
                            for (o, &x) in dk[c * d + hs..c * d + hs + dh].iter_mut().zip(qr) {
                                *o += ds * x;
                            }
                        }
                    }
                }
            }
        }
        self.acc(grads, q, |o| o.iter_mut().zip(&dq).for_each(|(o, &v)| *o += v));
        self.acc(grads, k, |o| o.iter_mut().zip(&dk).for_each(|(o, &v)| *o += v));
        self.acc(grads, v, |o| o.iter_mut().zip(&dv).for_each(|(o, &v)| *o += v));
    }
}

#[inline]
fn mask_allows(spec: &AttentionSpec, r: usize, c: usize) -> bool {
    spec.mask.get(r, c)
}
