use crate::data::{Behavior, Domain, ItemEntry, JaggedBatch, RequestHeader, Schema};
use crate::error::{Error, Result};
use crate::model::layout::{slot_specs, AttnBlock, DecoderBlock, Layout, Linear, Mlp};
use crate::model::ModelConfig;
use crate::numeric::{grad_check, FlopPolicy, GradCheckConfig, Graph, ParamStore, Real, SlotSpec, Tensor, Var};

/// Encoder output arranged as per-request key/value memory for the decoder.
#[derive(Clone, Debug)]
pub struct Memory {
    pub rows: Var,
    pub offsets: Vec<usize>,
}

/// Projected user-item keys and values of one decoder block.
#[derive(Clone, Copy, Debug)]
pub struct MemoryKv {
    pub k: Var,
    pub v: Var,
}

/// Items to decode: a flat slice with per-request offsets. Segment `r` is
/// offset by row `r` of `H`.
#[derive(Clone, Debug)]
pub struct ItemSet<'b> {
    pub items: &'b [ItemEntry],
    pub offsets: Vec<usize>,
}

impl<'b> ItemSet<'b> {
    pub fn of_batch(batch: &'b JaggedBatch) -> Self {
        Self { items: &batch.items, offsets: batch.item_offsets.clone() }
    }

    pub fn request_index(&self) -> Vec<usize> {
        (0..self.offsets.len() - 1)
            .flat_map(|r| std::iter::repeat(r).take(self.offsets[r + 1] - self.offsets[r]))
            .collect()
    }
}

/// Per-item logits of the exposure and click heads (one column each).
#[derive(Clone, Copy, Debug)]
pub struct Logits {
    pub exp: Var,
    pub clk: Var,
}

/// Per-item probabilities laid out like the batch's items.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<F> {
    pub p_exp: Vec<F>,
    pub p_clk: Vec<F>,
    pub item_offsets: Vec<usize>,
}

impl<F: Real> ForwardOutput<F> {
    pub fn request(&self, r: usize) -> (&[F], &[F]) {
        let (a, b) = (self.item_offsets[r], self.item_offsets[r + 1]);
        (&self.p_exp[a..b], &self.p_clk[a..b])
    }
}

/// The set-wise transformer: sequential encoder over the panoramic sequence,
/// cross-item / user-item decoder over the candidate set, two prediction heads.
#[derive(Clone, Debug)]
pub struct Homer {
    pub config: ModelConfig,
    pub schema: Schema,
}

impl Homer {
    pub fn new(config: ModelConfig, schema: Schema) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, schema })
    }

    pub fn slot_specs(&self) -> Vec<SlotSpec> {
        slot_specs(&self.config, &self.schema)
    }

    pub fn init_params<F: Real>(&self) -> Result<ParamStore<F>> {
        ParamStore::init(&self.slot_specs(), self.config.seed)
    }

    pub fn layout<F: Real>(&self, params: &ParamStore<F>) -> Result<Layout> {
        Layout::resolve(&self.config, &self.schema, params)
    }

    fn tables_of(&self, lay: &Layout, d: Domain) -> Vec<(usize, u32)> {
        self.schema
            .fields()
            .iter()
            .zip(&lay.field_tables)
            .filter(|(f, _)| f.domain == d)
            .map(|(f, &t)| (t, f.vocab_size))
            .collect()
    }

    fn linear<F: Real>(g: &mut Graph<'_, F>, lin: Linear, x: Var) -> Result<Var> {
        let w = g.param(lin.w);
        let b = g.param(lin.b);
        g.affine(x, w, Some(b))
    }

    fn activated<F: Real>(g: &mut Graph<'_, F>, lin: Linear, x: Var) -> Result<Var> {
        let y = Self::linear(g, lin, x)?;
        Ok(g.silu(y))
    }

    fn scale<F: Real>(&self) -> Option<F> {
        self.config.scale_mode.factor(self.config.d_token / self.config.heads)
    }

    /// `E^0_i = sigma1(phi(behavior_i)) + sigma2(phi(p_i)) + sigma3(phi(a_i))`.
    pub fn tokenize_behaviors<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, behaviors: &[Behavior]) -> Result<Var> {
        let n = behaviors.len();
        let fields = self.gather_fields(g, lay, &Domain::ALL, n, |r, d| behaviors[r].fields(d))?;
        let seq = Self::linear(g, lay.tok_behavior, fields)?;
        let pos_ids = behaviors.iter().map(|b| (b.position as usize).min(self.config.max_seq_len)).collect();
        let pos_table = g.param(lay.position_table);
        let pos = g.gather(pos_table, pos_ids)?;
        let pos = Self::linear(g, lay.tok_position, pos)?;
        let act_ids = behaviors.iter().map(|b| b.action.code() as usize).collect();
        let act_table = g.param(lay.action_table);
        let act = g.gather(act_table, act_ids)?;
        let act = Self::linear(g, lay.tok_action, act)?;
        let e = g.add(seq, pos)?;
        g.add(e, act)
    }

    fn gather_fields<'a, F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        lay: &Layout,
        domains: &[Domain],
        rows: usize,
        ids_of: impl Fn(usize, Domain) -> &'a [u32],
    ) -> Result<Var> {
        let mut parts = Vec::new();
        for &d in domains {
            for (j, (table, vocab)) in self.tables_of(lay, d).into_iter().enumerate() {
                let mut ids = Vec::with_capacity(rows);
                for r in 0..rows {
                    let row = ids_of(r, d);
                    let id = *row.get(j).ok_or_else(|| {
                        Error::Shape(format!("row {r} has {} {d} ids, schema has more", row.len()))
                    })?;
                    if id >= vocab {
                        return Err(Error::IdOutOfRange { id: id as usize, vocab: vocab as usize });
                    }
                    ids.push(id as usize);
                }
                let t = g.param(table);
                parts.push(g.gather(t, ids)?);
            }
        }
        g.concat_cols(&parts)
    }

    /// Residual self-attention block: `LN(o(silu(silu(q(x)) silu(k(x))^T) silu(v(x))) + x)`.
    fn self_block<F: Real>(&self, g: &mut Graph<'_, F>, blk: &AttnBlock, x: Var, offsets: &[usize]) -> Result<Var> {
        let q = Self::activated(g, blk.q, x)?;
        let k = Self::activated(g, blk.k, x)?;
        let v = Self::activated(g, blk.v, x)?;
        self.finish_block(g, blk, x, q, k, v, offsets, offsets)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_block<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        blk: &AttnBlock,
        residual: Var,
        q: Var,
        k: Var,
        v: Var,
        q_offsets: &[usize],
        kv_offsets: &[usize],
    ) -> Result<Var> {
        let a = g.attention(q, k, v, q_offsets, kv_offsets, self.config.heads, self.scale())?;
        let o = Self::linear(g, blk.o, a)?;
        let r = g.add(o, residual)?;
        let s = g.param(blk.ln_scale);
        let t = g.param(blk.ln_shift);
        g.layer_norm(r, s, t, F::lit(self.config.eps))
    }

    /// One encoder block; attention never crosses the segments in `offsets`.
    pub fn encoder_block<F: Real>(&self, g: &mut Graph<'_, F>, blk: &AttnBlock, e: Var, offsets: &[usize]) -> Result<Var> {
        self.self_block(g, blk, e, offsets)
    }

    /// `E^L` for every behavior of the batch (no empty-sequence fallback).
    pub fn encode_sequences<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, batch: &JaggedBatch) -> Result<Var> {
        let mut e = self.tokenize_behaviors(g, lay, &batch.behaviors)?;
        for blk in &lay.encoder {
            e = self.encoder_block(g, blk, e, &batch.seq_offsets)?;
        }
        Ok(e)
    }

    /// Encoder output as decoder memory; requests without behaviors get the
    /// learned null-behavior row instead.
    pub fn encode<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, batch: &JaggedBatch) -> Result<Memory> {
        let e = self.encode_sequences(g, lay, batch)?;
        if (0..batch.len()).all(|r| batch.seq_len(r) > 0) {
            return Ok(Memory { rows: e, offsets: batch.seq_offsets.clone() });
        }
        let null = g.param(lay.null_behavior);
        let total = batch.behaviors.len();
        let stacked = g.concat_rows(&[e, null])?;
        let mut idx = Vec::with_capacity(total + batch.len());
        let mut offsets = vec![0];
        for r in 0..batch.len() {
            if batch.seq_len(r) == 0 {
                idx.push(total);
            } else {
                idx.extend(batch.seq_offsets[r]..batch.seq_offsets[r + 1]);
            }
            offsets.push(idx.len());
        }
        let rows = g.gather(stacked, idx)?;
        Ok(Memory { rows, offsets })
    }

    /// `H = sigma1_bar(phi(f_u) || phi(f_c))`, one row per request.
    pub fn user_context<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, requests: &[RequestHeader]) -> Result<Var> {
        let x = self.gather_fields(g, lay, &[Domain::User, Domain::Context], requests.len(), |r, d| match d {
            Domain::User => &requests[r].user_fields,
            _ => &requests[r].ctx_fields,
        })?;
        Self::linear(g, lay.tok_user_ctx, x)
    }

    /// `D^0_i = sigma2_bar(phi(f_i) || phi(f_ui)) + H`.
    pub fn tokenize_items<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, h: Var, items: &ItemSet<'_>) -> Result<Var> {
        let list = items.items;
        let x = self.gather_fields(g, lay, &[Domain::Item, Domain::Cross], list.len(), |r, d| match d {
            Domain::Item => &list[r].item_fields,
            _ => &list[r].cross_fields,
        })?;
        let it = Self::linear(g, lay.tok_item, x)?;
        let hb = g.gather(h, items.request_index())?;
        g.add(it, hb)
    }

    /// User-item keys and values for every decoder block. They depend only on
    /// the encoder output, so sharded serving computes them once per request.
    pub fn project_memory<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, memory: &Memory) -> Result<Vec<MemoryKv>> {
        lay.decoder
            .iter()
            .map(|blk| {
                let k = Self::activated(g, blk.user_item.k, memory.rows)?;
                let v = Self::activated(g, blk.user_item.v, memory.rows)?;
                Ok(MemoryKv { k, v })
            })
            .collect()
    }

    /// Cross-item self-attention (skipped by variants without it), then
    /// user-item cross-attention against the memory.
    pub fn decoder_block<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        blk: &DecoderBlock,
        d: Var,
        item_offsets: &[usize],
        kv: MemoryKv,
        mem_offsets: &[usize],
    ) -> Result<Var> {
        let d_bar = match &blk.cross_item {
            Some(cross) => self.self_block(g, cross, d, item_offsets)?,
            None => d,
        };
        let q = Self::activated(g, blk.user_item.q, d_bar)?;
        self.finish_block(g, &blk.user_item, d_bar, q, kv.k, kv.v, item_offsets, mem_offsets)
    }

    fn mlp<F: Real>(g: &mut Graph<'_, F>, mlp: Mlp, x: Var) -> Result<Var> {
        let h = Self::activated(g, mlp.hidden, x)?;
        Self::linear(g, mlp.out, h)
    }

    pub fn heads<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, d: Var) -> Result<Logits> {
        Ok(Logits { exp: Self::mlp(g, lay.head_exp, d)?, clk: Self::mlp(g, lay.head_clk, d)? })
    }

    /// Decodes `items` against prepared request context.
    pub fn decode<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        lay: &Layout,
        h: Var,
        items: &ItemSet<'_>,
        kv: &[MemoryKv],
        mem_offsets: &[usize],
    ) -> Result<Logits> {
        let mut d = self.tokenize_items(g, lay, h, items)?;
        for (blk, &kv) in lay.decoder.iter().zip(kv) {
            d = self.decoder_block(g, blk, d, &items.offsets, kv, mem_offsets)?;
        }
        self.heads(g, lay, d)
    }

    /// Full pipeline up to the head logits.
    pub fn logits<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, batch: &JaggedBatch) -> Result<Logits> {
        if batch.items.is_empty() && !batch.is_empty() {
            return Err(Error::Invalid("batch has no items".into()));
        }
        let memory = self.encode(g, lay, batch)?;
        let kv = self.project_memory(g, lay, &memory)?;
        let h = self.user_context(g, lay, &batch.requests)?;
        self.decode(g, lay, h, &ItemSet::of_batch(batch), &kv, &memory.offsets)
    }

    /// Probabilities for every item of the batch.
    pub fn forward<F: Real>(&self, params: &ParamStore<F>, batch: &JaggedBatch) -> Result<ForwardOutput<F>> {
        self.forward_counted(params, batch, FlopPolicy::ALL).map(|(out, _)| out)
    }

    /// [`Homer::forward`] that also reports the FLOPs it executed.
    pub fn forward_counted<F: Real>(
        &self,
        params: &ParamStore<F>,
        batch: &JaggedBatch,
        policy: FlopPolicy,
    ) -> Result<(ForwardOutput<F>, u64)> {
        let lay = self.layout(params)?;
        let mut g = Graph::with_policy(params, policy);
        let logits = self.logits(&mut g, &lay, batch)?;
        let p_exp = g.sigmoid(logits.exp);
        let p_clk = g.sigmoid(logits.clk);
        let out = ForwardOutput {
            p_exp: g.value(p_exp).data().to_vec(),
            p_clk: g.value(p_clk).data().to_vec(),
            item_offsets: batch.item_offsets.clone(),
        };
        Ok((out, g.flops()))
    }

    /// Training objective `L_clk + lambda * L_imp` on one batch; returns the
    /// graph's loss node together with the two components.
    pub fn loss<F: Real>(&self, g: &mut Graph<'_, F>, lay: &Layout, batch: &JaggedBatch) -> Result<LossNodes> {
        let logits = self.logits(g, lay, batch)?;
        let y_clk: Vec<F> = batch.items.iter().map(|i| if i.clicked { F::one() } else { F::zero() }).collect();
        let y_exp: Vec<F> = batch.items.iter().map(|i| if i.exposed { F::one() } else { F::zero() }).collect();
        let exposed: Vec<bool> = batch.items.iter().map(|i| i.exposed).collect();
        let all = vec![true; batch.items.len()];
        let clk = g.bce_with_logits(logits.clk, &y_clk, &exposed)?;
        let imp = g.bce_with_logits(logits.exp, &y_exp, &all)?;
        let lambda = self.config.effective_lambda();
        let total = if lambda == 0.0 {
            clk
        } else {
            let weighted = g.scale(imp, F::lit(lambda));
            g.add(clk, weighted)?
        };
        Ok(LossNodes { total, clk, imp })
    }

    /// Loss value and gradients for every slot.
    pub fn loss_and_grads<F: Real>(
        &self,
        params: &ParamStore<F>,
        batch: &JaggedBatch,
    ) -> Result<(LossValues, crate::numeric::Grads<F>)> {
        let lay = self.layout(params)?;
        let mut g = Graph::new(params);
        let nodes = self.loss(&mut g, &lay, batch)?;
        let values = nodes.values(&g);
        let grads = g.backward(nodes.total)?;
        Ok((values, grads))
    }

    /// Loss value only.
    pub fn loss_value<F: Real>(&self, params: &ParamStore<F>, batch: &JaggedBatch) -> Result<LossValues> {
        let lay = self.layout(params)?;
        let mut g = Graph::new(params);
        let nodes = self.loss(&mut g, &lay, batch)?;
        Ok(nodes.values(&g))
    }

    /// Worst relative error between the analytic gradient of the total loss
    /// and central differences on randomly chosen coordinates.
    pub fn check_gradients(&self, params: &ParamStore<f64>, batch: &JaggedBatch, cfg: GradCheckConfig) -> Result<f64> {
        let (_, grads) = self.loss_and_grads(params, batch)?;
        grad_check(params, &grads, |p| Ok(self.loss_value(p, batch)?.total), cfg)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub clk: Var,
    pub imp: Var,
}

impl LossNodes {
    pub fn values<F: Real>(&self, g: &Graph<'_, F>) -> LossValues {
        LossValues { total: g.scalar(self.total).as_f64(), clk: g.scalar(self.clk).as_f64(), imp: g.scalar(self.imp).as_f64() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub clk: f64,
    pub imp: f64,
}

/// Value of a forward node, for tests and tools that poke at intermediates.
pub fn tensor_of<F: Real>(g: &Graph<'_, F>, v: Var) -> Tensor<F> {
    g.value(v).clone()
}
