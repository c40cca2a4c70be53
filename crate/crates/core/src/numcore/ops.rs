//! Forward kernels and their hand-derived backward passes.
//!
//! Every kernel keeps a fixed summation order so repeated runs are bitwise
//! reproducible.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_matrix(t: &Tensor, what: &str) -> Result<()> {
    if t.dims().len() != 2 {
        return Err(Error::Shape(format!("{what}: expected a matrix, got dims {:?}", t.dims())));
    }
    Ok(())
}

/// `c = a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix(a, "matmul lhs")?;
    check_matrix(b, "matmul rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Shape(format!("matmul: {m}×{k} · {k2}×{n}")));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// `out += a · b` on raw row-major buffers. Accumulates over the inner index in order.
pub(crate) fn matmul_into(a: &[Scalar], b: &[Scalar], out: &mut [Scalar], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: m×k`, `b: n×k`.
pub(crate) fn matmul_nt_into(a: &[Scalar], b: &[Scalar], out: &mut [Scalar], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(arow, brow);
        }
    }
}

/// `out += aᵀ · b` for `a: m×k`, `b: m×n`, `out: k×n`.
pub(crate) fn matmul_tn_into(a: &[Scalar], b: &[Scalar], out: &mut [Scalar], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[Scalar], b: &[Scalar]) -> Scalar {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Gradients of `c = a · b`: `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if dc.rows() != m || dc.cols() != n || b.rows() != k {
        return Err(Error::Shape("matmul_backward: incompatible shapes".into()));
    }
    let mut da = vec![0.0; m * k];
    let mut db = vec![0.0; k * n];
    matmul_nt_into(dc.data(), b.data(), &mut da, m, n, k);
    matmul_tn_into(a.data(), dc.data(), &mut db, m, k, n);
    Ok((Tensor::new(vec![m, k], da)?, Tensor::new(vec![k, n], db)?))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.detached();
    let c = x.cols();
    if c == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [Scalar]) {
    let m = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Gradient of softmax given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let c = y.cols();
    let mut dx = y.detached();
    for ((dxr, yr), dyr) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)).zip(dy.data().chunks(c)) {
        let inner = dot(yr, dyr);
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - inner);
        }
    }
    dx
}

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub xhat: Tensor,
    pub rstd: Vec<Scalar>,
}

/// Layer normalization over the last axis. A zero-variance row normalizes to zero, so its output is `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: Scalar) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "layer_norm: width {d}, gamma {}, beta {}",
            gamma.len(),
            beta.len()
        )));
    }
    let rows = x.rows();
    let mut xhat = vec![0.0; rows * d];
    let mut out = vec![0.0; rows * d];
    let mut rstd = Vec::with_capacity(rows);
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..rows {
        let xr = x.row(r);
        let mean = xr.iter().sum::<Scalar>() / d as Scalar;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<Scalar>() / d as Scalar;
        let rs = 1.0 / (var + eps).sqrt();
        rstd.push(rs);
        for c in 0..d {
            let h = (xr[c] - mean) * rs;
            xhat[r * d + c] = h;
            out[r * d + c] = h * g[c] + b[c];
        }
    }
    let dims = vec![rows, d];
    Ok((Tensor::new(dims.clone(), out)?, LayerNormCache { xhat: Tensor::new(dims, xhat)?, rstd }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = gamma.len();
    let rows = dy.rows();
    let mut dx = vec![0.0; rows * d];
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let g = gamma.data();
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
        }
        let mean_dxhat = dxhat.iter().sum::<Scalar>() / d as Scalar;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as Scalar;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[r * d + c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    (
        Tensor::new(vec![rows, d], dx).expect("shape"),
        Tensor::new(gamma.dims().to_vec(), dg).expect("shape"),
        Tensor::new(gamma.dims().to_vec(), db).expect("shape"),
    )
}

const GELU_C: Scalar = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.detached();
    for v in out.data_mut() {
        let u = *v;
        *v = 0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh());
    }
    out
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = x.detached();
    for (d, &g) in dx.data_mut().iter_mut().zip(dy.data()) {
        let u = *d;
        let inner = GELU_C * (u + 0.044715 * u * u * u);
        let t = inner.tanh();
        let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * u * u);
        *d = g * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dinner);
    }
    dx
}

/// Softmax probabilities kept for the cross-entropy backward pass.
#[derive(Clone, Debug)]
pub struct CrossEntropyCache {
    pub probs: Tensor,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub count: usize,
}

/// Mean negative log-likelihood over the positions whose mask bit is set.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<(Scalar, CrossEntropyCache)> {
    let (n, v) = (logits.rows(), logits.cols());
    if targets.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "cross_entropy: {n} rows, {} targets, {} mask bits",
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidInput("cross_entropy: empty mask".into()));
    }
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if t >= v {
            return Err(Error::InvalidInput(format!("target {t} outside vocabulary of {v}")));
        }
        // log-sum-exp form keeps precision when the target probability underflows
        let row = logits.row(r);
        let mx = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<Scalar>().ln();
        loss += lse - row[t];
    }
    let loss = loss / count as Scalar;
    Ok((loss, CrossEntropyCache { probs, targets: targets.to_vec(), mask: mask.to_vec(), count }))
}

/// Gradient of the mean masked NLL with respect to the logits, scaled by `dloss`.
pub fn cross_entropy_backward(cache: &CrossEntropyCache, dloss: Scalar) -> Tensor {
    let v = cache.probs.cols();
    let mut d = Tensor::zeros(cache.probs.dims());
    let scale = dloss / cache.count as Scalar;
    for r in 0..cache.probs.rows() {
        if !cache.mask[r] {
            continue;
        }
        let p = cache.probs.row(r);
        let dr = &mut d.data_mut()[r * v..(r + 1) * v];
        for (o, &pv) in dr.iter_mut().zip(p) {
            *o = pv * scale;
        }
        dr[cache.targets[r]] -= scale;
    }
    d
}
