//! Reverse-mode tape.
//!
//! A [`Graph`] borrows a [`ParamStore`], records every op applied to it and
//! replays them backwards to produce per-slot gradients. Forward values are
//! computed eagerly by the kernels in [`super::ops`], so a forward-only graph
//! is just an instrumented inference pass.

use crate::error::{Error, Result};
use crate::numeric::flops::{self, FlopCounter, FlopPolicy};
use crate::numeric::ops::{self, AttnCache};
use crate::numeric::{Grads, ParamStore, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<F> {
    Owned(Tensor<F>),
    Param(usize),
}

enum Op<F> {
    Leaf,
    Param(usize),
    Affine { x: Var, w: Var, b: Option<Var> },
    Silu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, F),
    LayerNorm { x: Var, scale: Var, shift: Var, xhat: Tensor<F>, inv_std: Vec<F> },
    Attention(Box<AttentionNode<F>>),
    Gather { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Mean(Var),
    Bce { logits: Var, targets: Vec<F>, mask: Vec<bool>, count: usize },
}

struct AttentionNode<F> {
    q: Var,
    k: Var,
    v: Var,
    q_offsets: Vec<usize>,
    kv_offsets: Vec<usize>,
    heads: usize,
    scale: Option<F>,
    caches: Vec<AttnCache<F>>,
}

struct Node<F> {
    value: Value<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: Vec<Option<Var>>,
    flops: FlopCounter,
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self::with_policy(params, FlopPolicy::ALL)
    }

    pub fn with_policy(params: &'p ParamStore<F>, policy: FlopPolicy) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()], flops: FlopCounter::new(policy) }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    /// FLOPs executed by the forward ops recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops.total
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(slot) => self.params.get(*slot),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn count(&mut self, f: u64) {
        self.flops.total += f;
    }

    fn policy(&self) -> FlopPolicy {
        self.flops.policy
    }

    /// Constant input; gradients stop here.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable slot. Repeated requests for the same slot share one node.
    pub fn param(&mut self, slot: usize) -> Var {
        if let Some(v) = self.param_vars[slot] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(slot), op: Op::Param(slot), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[slot] = Some(v);
        v
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::affine(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (n, d_in) = self.value(x).shape();
        let policy = FlopPolicy { bias: self.policy().bias && b.is_some(), ..self.policy() };
        self.count(flops::affine_flops(policy, n as u64, d_in as u64, out.cols() as u64));
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Affine { x, w, b }, &inputs))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = ops::silu(self.value(x));
        self.count(flops::elementwise_flops(self.policy(), flops::SILU_FLOPS, out.len() as u64));
        self.push(out, Op::Silu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.count(flops::elementwise_flops(self.policy(), flops::SIGMOID_FLOPS, out.len() as u64));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.count(flops::elementwise_flops(self.policy(), flops::ADD_FLOPS, out.len() as u64));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.count(flops::elementwise_flops(self.policy(), flops::SCALE_FLOPS, out.len() as u64));
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: F) -> Result<Var> {
        let (out, xhat, inv_std) = ops::layer_norm_parts(self.value(x), self.value(scale), self.value(shift), eps)?;
        self.count(flops::elementwise_flops(self.policy(), flops::LAYER_NORM_FLOPS, out.len() as u64));
        Ok(self.push(out, Op::LayerNorm { x, scale, shift, xhat, inv_std }, &[x, scale, shift]))
    }

    /// Segmented SiLU attention; see [`ops::attention_core`] for the per-segment contract.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        q_offsets: &[usize],
        kv_offsets: &[usize],
        heads: usize,
        scale: Option<F>,
    ) -> Result<Var> {
        let (out, caches) = ops::segmented_attention(
            self.value(q),
            self.value(k),
            self.value(v),
            q_offsets,
            kv_offsets,
            heads,
            scale,
        )?;
        let d = out.cols() as u64;
        let mut f = 0;
        for s in 0..q_offsets.len() - 1 {
            let nq = (q_offsets[s + 1] - q_offsets[s]) as u64;
            let nk = (kv_offsets[s + 1] - kv_offsets[s]) as u64;
            f += flops::attention_flops(self.policy(), nq, nk, d, heads as u64, scale.is_some());
        }
        self.count(f);
        let node = AttentionNode {
            q,
            k,
            v,
            q_offsets: q_offsets.to_vec(),
            kv_offsets: kv_offsets.to_vec(),
            heads,
            scale,
            caches,
        };
        Ok(self.push(out, Op::Attention(Box::new(node)), &[q, k, v]))
    }

    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let out = ops::embedding_gather(self.value(table), &ids)?;
        Ok(self.push(out, Op::Gather { table, ids }, &[table]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let out = {
            let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
            ops::concat_cols(&tensors)?
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
            ops::concat_rows(&tensors)?
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = ops::mean_reduce(self.value(x));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean binary cross-entropy on logits over rows with `mask[i]`; 0 when no row is selected.
    ///
    /// `logits` must be a single column.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F], mask: &[bool]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() || z.rows() != mask.len() {
            return Err(Error::Shape("bce expects one logit column matching targets and mask".into()));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = F::zero();
        for i in 0..z.rows() {
            if mask[i] {
                let zi = z.data()[i];
                total += ops::softplus_scalar(zi) - targets[i] * zi;
            }
        }
        let loss = if count == 0 { F::zero() } else { total / F::lit(count as f64) };
        let op = Op::Bce { logits, targets: targets.to_vec(), mask: mask.to_vec(), count };
        Ok(self.push(Tensor::row_vector(vec![loss]), op, &[logits]))
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> F {
        self.value(v).data()[0]
    }

    /// Back-propagates from a 1x1 node and returns gradients for every slot
    /// (zero for slots the graph never touched).
    pub fn backward(&self, root: Var) -> Result<Grads<F>> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Shape("backward root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(1, 1, F::one()));
        let mut out = self.params.zeros_like();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Tensor<F>>>, target: Var, t: Tensor<F>| {
                if !self.nodes[target.0].needs_grad {
                    return;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(slot) => out.tensors[*slot].add_assign(&g),
                Op::Affine { x, w, b } => {
                    let (dx, dw, db) = ops::affine_backward(self.value(*x), self.value(*w), &g);
                    send(&mut grads, *x, dx);
                    send(&mut grads, *w, dw);
                    if let Some(b) = b {
                        send(&mut grads, *b, db);
                    }
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    for (gd, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                        *gd *= ops::silu_grad_scalar(xi);
                    }
                    send(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let yv = self.value(Var(idx));
                    let mut d = g;
                    for (gd, &y) in d.data_mut().iter_mut().zip(yv.data()) {
                        *gd *= y * (F::one() - y);
                    }
                    send(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    send(&mut grads, *x, g.map(|v| v * c));
                }
                Op::LayerNorm { x, scale, shift, xhat, inv_std } => {
                    let (dx, ds, db) = ops::layer_norm_backward(xhat, inv_std, self.value(*scale), &g);
                    send(&mut grads, *x, dx);
                    send(&mut grads, *scale, ds);
                    send(&mut grads, *shift, db);
                }
                Op::Attention(a) => {
                    let (dq, dk, dv) = ops::segmented_attention_backward(
                        self.value(a.q),
                        self.value(a.k),
                        self.value(a.v),
                        &a.q_offsets,
                        &a.kv_offsets,
                        a.heads,
                        a.scale,
                        &a.caches,
                        &g,
                    );
                    send(&mut grads, a.q, dq);
                    send(&mut grads, a.k, dk);
                    send(&mut grads, a.v, dv);
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut dt = Tensor::zeros(tv.rows(), tv.cols());
                    ops::embedding_scatter_add(&mut dt, ids, &g);
                    send(&mut grads, *table, dt);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut d = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                        }
                        off += cols;
                        send(&mut grads, p, d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        send(&mut grads, p, g.slice_rows(off, off + rows));
                        off += rows;
                    }
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let n = xv.len().max(1);
                    let c = g.data()[0] / F::lit(n as f64);
                    send(&mut grads, *x, Tensor::full(xv.rows(), xv.cols(), c));
                }
                Op::Bce { logits, targets, mask, count } => {
                    let z = self.value(*logits);
                    let mut d = Tensor::zeros(z.rows(), 1);
                    if *count > 0 {
                        let c = g.data()[0] / F::lit(*count as f64);
                        for i in 0..z.rows() {
                            if mask[i] {
                                d.data_mut()[i] = c * (ops::sigmoid_scalar(z.data()[i]) - targets[i]);
                            }
                        }
                    }
                    send(&mut grads, *logits, d);
                }
            }
        }
        Ok(out)
    }
}
