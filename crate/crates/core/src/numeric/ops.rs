//! Dense forward kernels and their analytic adjoints.
//!
//! Every kernel here is row-local: output row `i` depends only on input row
//! `i` (or, for attention, on its own segment), and the accumulation order
//! inside a row is fixed. Batching unrelated requests together therefore never
//! changes their bits.

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// How attention scores are scaled before the SiLU nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScaleMode {
    /// Raw `Q K^T`.
    None,
    /// `Q K^T / sqrt(head_dim)`.
    InvSqrtDim,
}

impl ScaleMode {
    pub fn factor<F: Real>(self, head_dim: usize) -> Option<F> {
        match self {
            ScaleMode::None => None,
            ScaleMode::InvSqrtDim => Some(F::one() / F::lit(head_dim as f64).sqrt()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleMode::None => "none",
            ScaleMode::InvSqrtDim => "sqrt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ScaleMode::None),
            "sqrt" => Some(ScaleMode::InvSqrtDim),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn silu_scalar<F: Real>(x: F) -> F {
    x * sigmoid_scalar(x)
}

/// d/dx [x * sigmoid(x)].
#[inline]
pub fn silu_grad_scalar<F: Real>(x: F) -> F {
    let s = sigmoid_scalar(x);
    s * (F::one() + x * (F::one() - s))
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus_scalar<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn silu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(silu_scalar)
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

/// `x W + b`, with `b` broadcast over rows.
pub fn affine<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>> {
    if x.cols() != w.rows() {
        return Err(Error::Shape(format!(
            "affine input has {} cols but weight has {} rows",
            x.cols(),
            w.rows()
        )));
    }
    let d_out = w.cols();
    if let Some(b) = b {
        if b.rows() != 1 || b.cols() != d_out {
            return Err(Error::Shape(format!("bias {:?} does not match output width {d_out}", b.shape())));
        }
    }
    let mut out = Tensor::zeros(x.rows(), d_out);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        if let Some(b) = b {
            oi.copy_from_slice(b.data());
        }
        for (k, &a) in xi.iter().enumerate() {
            if a == F::zero() {
                continue;
            }
            let wk = w.row(k);
            for (o, &wv) in oi.iter_mut().zip(wk) {
                *o += a * wv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`affine`]: returns `(dx, dw, db)`.
pub fn affine_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    dout: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (n, d_in) = x.shape();
    let d_out = w.cols();
    let mut dx = Tensor::zeros(n, d_in);
    let mut dw = Tensor::zeros(d_in, d_out);
    let mut db = Tensor::zeros(1, d_out);
    for i in 0..n {
        let gi = dout.row(i);
        for (acc, &g) in db.data_mut().iter_mut().zip(gi) {
            *acc += g;
        }
        let xi = x.row(i);
        for k in 0..d_in {
            let wk = w.row(k);
            let mut s = F::zero();
            for (&g, &wv) in gi.iter().zip(wk) {
                s += g * wv;
            }
            dx.set(i, k, s);
            let a = xi[k];
            if a != F::zero() {
                for (acc, &g) in dw.row_mut(k).iter_mut().zip(gi) {
                    *acc += a * g;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-row layer normalization with biased variance.
///
/// Returns the output together with the normalized rows and the per-row
/// inverse standard deviation needed by the adjoint.
pub fn layer_norm_parts<F: Real>(
    x: &Tensor<F>,
    scale: &Tensor<F>,
    shift: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, Tensor<F>, Vec<F>)> {
    let (n, d) = x.shape();
    if d == 0 {
        return Err(Error::Shape("layer_norm needs at least one column".into()));
    }
    if scale.len() != d || shift.len() != d {
        return Err(Error::Shape(format!("layer_norm parameters must have {d} entries")));
    }
    let inv_d = F::one() / F::lit(d as f64);
    let mut y = Tensor::zeros(n, d);
    let mut xhat = Tensor::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let inv = F::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let hr = xhat.row_mut(i);
        for (h, &v) in hr.iter_mut().zip(row) {
            *h = (v - mean) * inv;
        }
        let hr = xhat.row(i).to_vec();
        for ((o, h), (&g, &b)) in y.row_mut(i).iter_mut().zip(hr).zip(scale.data().iter().zip(shift.data())) {
            *o = h * g + b;
        }
    }
    Ok((y, xhat, inv_std))
}

pub fn layer_norm<F: Real>(x: &Tensor<F>, scale: &Tensor<F>, shift: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
    layer_norm_parts(x, scale, shift, eps).map(|(y, _, _)| y)
}

/// Adjoint of [`layer_norm`]: returns `(dx, dscale, dshift)`.
pub fn layer_norm_backward<F: Real>(
    xhat: &Tensor<F>,
    inv_std: &[F],
    scale: &Tensor<F>,
    dout: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (n, d) = xhat.shape();
    let inv_d = F::one() / F::lit(d as f64);
    let mut dx = Tensor::zeros(n, d);
    let mut dscale = Tensor::zeros(1, d);
    let mut dshift = Tensor::zeros(1, d);
    let mut dxhat = vec![F::zero(); d];
    for i in 0..n {
        let g = dout.row(i);
        let h = xhat.row(i);
        let mut sum_dh = F::zero();
        let mut sum_dh_h = F::zero();
        for j in 0..d {
            dscale.data_mut()[j] += g[j] * h[j];
            dshift.data_mut()[j] += g[j];
            dxhat[j] = g[j] * scale.data()[j];
            sum_dh += dxhat[j];
            sum_dh_h += dxhat[j] * h[j];
        }
        let inv = inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = inv * (dxhat[j] - inv_d * sum_dh - h[j] * inv_d * sum_dh_h);
        }
    }
    (dx, dscale, dshift)
}

/// Row gather from an embedding table.
pub fn embedding_gather<F: Real>(table: &Tensor<F>, ids: &[usize]) -> Result<Tensor<F>> {
    let d = table.cols();
    let mut out = Tensor::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        if id >= table.rows() {
            return Err(Error::IdOutOfRange { id, vocab: table.rows() });
        }
        out.row_mut(i).copy_from_slice(table.row(id));
    }
    Ok(out)
}

/// Adjoint of [`embedding_gather`]: duplicate ids accumulate.
pub fn embedding_scatter_add<F: Real>(grad_table: &mut Tensor<F>, ids: &[usize], dout: &Tensor<F>) {
    for (i, &id) in ids.iter().enumerate() {
        for (acc, &g) in grad_table.row_mut(id).iter_mut().zip(dout.row(i)) {
            *acc += g;
        }
    }
}

pub fn concat_rows<F: Real>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let cols = parts.first().map_or(0, |t| t.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::Shape(format!("concat_rows: {} vs {} cols", p.cols(), cols)));
        }
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(rows, cols, data)
}

pub fn concat_cols<F: Real>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let rows = parts.first().map_or(0, |t| t.rows());
    if let Some(p) = parts.iter().find(|p| p.rows() != rows) {
        return Err(Error::Shape(format!("concat_cols: {} vs {} rows", p.rows(), rows)));
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        let mut off = 0;
        let dst = out.row_mut(i);
        for p in parts {
            dst[off..off + p.cols()].copy_from_slice(p.row(i));
            off += p.cols();
        }
    }
    Ok(out)
}

/// Mean over all entries, as a 1x1 tensor. The mean of an empty tensor is 0.
pub fn mean_reduce<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let v = if x.is_empty() { F::zero() } else { x.data().iter().copied().sum::<F>() / F::lit(x.len() as f64) };
    Tensor::row_vector(vec![v])
}

/// Cached intermediates of one attention segment and head.
#[derive(Clone, Debug)]
pub(crate) struct AttnCache<F> {
    /// Scaled scores, `nq x nk`.
    pub scores: Vec<F>,
}

fn check_attention_shapes<F: Real>(q: &Tensor<F>, k: &Tensor<F>, v: &Tensor<F>, heads: usize) -> Result<()> {
    if k.rows() != v.rows() {
        return Err(Error::Shape(format!("attention keys have {} rows, values {}", k.rows(), v.rows())));
    }
    if q.cols() != k.cols() || k.cols() != v.cols() {
        return Err(Error::Shape(format!(
            "attention widths differ: q {}, k {}, v {}",
            q.cols(),
            k.cols(),
            v.cols()
        )));
    }
    if heads == 0 || q.cols() % heads != 0 {
        return Err(Error::Shape(format!("width {} is not divisible by {heads} heads", q.cols())));
    }
    Ok(())
}

/// Segmented SiLU attention: for each segment `s`, queries
/// `q_offsets[s]..q_offsets[s+1]` attend to keys/values
/// `kv_offsets[s]..kv_offsets[s+1]` only.
///
/// Per segment and head: `out = silu(scale * Q K^T) V`. There is no softmax.
pub(crate) fn segmented_attention<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    q_offsets: &[usize],
    kv_offsets: &[usize],
    heads: usize,
    scale: Option<F>,
) -> Result<(Tensor<F>, Vec<AttnCache<F>>)> {
    check_attention_shapes(q, k, v, heads)?;
    if q_offsets.len() != kv_offsets.len() || q_offsets.last() != Some(&q.rows()) || kv_offsets.last() != Some(&k.rows())
    {
        return Err(Error::Shape("attention offsets do not cover their tensors".into()));
    }
    let d = q.cols();
    let dh = d / heads;
    let mut out = Tensor::zeros(q.rows(), d);
    let mut caches = Vec::with_capacity((q_offsets.len() - 1) * heads);
    for s in 0..q_offsets.len() - 1 {
        let (q0, q1) = (q_offsets[s], q_offsets[s + 1]);
        let (k0, k1) = (kv_offsets[s], kv_offsets[s + 1]);
        let nq = q1 - q0;
        let nk = k1 - k0;
        if nq > 0 && nk == 0 {
            return Err(Error::EmptyKeys { segment: s });
        }
        for h in 0..heads {
            let c0 = h * dh;
            let mut scores = vec![F::zero(); nq * nk];
            for i in 0..nq {
                let qi = &q.row(q0 + i)[c0..c0 + dh];
                for j in 0..nk {
                    let kj = &k.row(k0 + j)[c0..c0 + dh];
                    let mut dot = F::zero();
                    for (&a, &b) in qi.iter().zip(kj) {
                        dot += a * b;
                    }
                    if let Some(sc) = scale {
                        dot *= sc;
                    }
                    scores[i * nk + j] = dot;
                }
            }
            for i in 0..nq {
                let orow = &mut out.row_mut(q0 + i)[c0..c0 + dh];
                for j in 0..nk {
                    let a = silu_scalar(scores[i * nk + j]);
                    let vj = &v.row(k0 + j)[c0..c0 + dh];
                    for (o, &vv) in orow.iter_mut().zip(vj) {
                        *o += a * vv;
                    }
                }
            }
            caches.push(AttnCache { scores });
        }
    }
    Ok((out, caches))
}

/// Adjoint of [`segmented_attention`]: returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn segmented_attention_backward<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    q_offsets: &[usize],
    kv_offsets: &[usize],
    heads: usize,
    scale: Option<F>,
    caches: &[AttnCache<F>],
    dout: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let d = q.cols();
    let dh = d / heads;
    let mut dq = Tensor::zeros(q.rows(), d);
    let mut dk = Tensor::zeros(k.rows(), d);
    let mut dv = Tensor::zeros(v.rows(), d);
    let sc = scale.unwrap_or(F::one());
    let mut cache_iter = caches.iter();
    for s in 0..q_offsets.len() - 1 {
        let (q0, q1) = (q_offsets[s], q_offsets[s + 1]);
        let (k0, k1) = (kv_offsets[s], kv_offsets[s + 1]);
        let nq = q1 - q0;
        let nk = k1 - k0;
        for h in 0..heads {
            let cache = cache_iter.next().expect("one cache per segment and head");
            let c0 = h * dh;
            for i in 0..nq {
                let gi = &dout.row(q0 + i)[c0..c0 + dh];
                for j in 0..nk {
                    let sij = cache.scores[i * nk + j];
                    let a = silu_scalar(sij);
                    // dV_j += a_ij * dOut_i
                    for (acc, &g) in dv.row_mut(k0 + j)[c0..c0 + dh].iter_mut().zip(gi) {
                        *acc += a * g;
                    }
                    // dA_ij = dOut_i . V_j
                    let vj = &v.row(k0 + j)[c0..c0 + dh];
                    let mut da = F::zero();
                    for (&g, &vv) in gi.iter().zip(vj) {
                        da += g * vv;
                    }
                    let ds = da * silu_grad_scalar(sij) * sc;
                    if ds == F::zero() {
                        continue;
                    }
                    let kj = &k.row(k0 + j)[c0..c0 + dh];
                    for (acc, &kv) in dq.row_mut(q0 + i)[c0..c0 + dh].iter_mut().zip(kj) {
                        *acc += ds * kv;
                    }
                    let qi = &q.row(q0 + i)[c0..c0 + dh];
                    for (acc, &qv) in dk.row_mut(k0 + j)[c0..c0 + dh].iter_mut().zip(qi) {
                        *acc += ds * qv;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Single-segment SiLU attention: `silu(scale * Q K^T) V`.
pub fn attention_core<F: Real>(
    q: &Tensor<F>,
    k: &Tensor<F>,
    v: &Tensor<F>,
    heads: usize,
    scale_mode: ScaleMode,
) -> Result<Tensor<F>> {
    check_attention_shapes(q, k, v, heads)?;
    if k.rows() == 0 {
        return Err(Error::EmptyKeys { segment: 0 });
    }
    let scale = scale_mode.factor(q.cols() / heads);
    segmented_attention(q, k, v, &[0, q.rows()], &[0, k.rows()], heads, scale).map(|(out, _)| out)
}
