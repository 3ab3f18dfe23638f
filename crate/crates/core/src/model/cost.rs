//! Closed-form parameter and FLOP accounting.
//!
//! The FLOP formulas mirror, op for op, what an instrumented [`Graph`]
//! tallies during [`Homer::forward`], so the two can be reconciled exactly.
//!
//! [`Graph`]: crate::numeric::Graph
//! [`Homer::forward`]: crate::model::Homer::forward

use crate::data::{Action, Domain, Schema};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numeric::flops::{
    affine_flops, attention_flops, elementwise_flops, ADD_FLOPS, LAYER_NORM_FLOPS, SIGMOID_FLOPS, SILU_FLOPS,
};
use crate::numeric::{FlopPolicy, ScaleMode};

/// Exact number of trainable scalars.
pub fn count_params(cfg: &ModelConfig, schema: &Schema) -> Result<usize> {
    if schema.fields().is_empty() {
        return Err(Error::Config("schema has no fields".into()));
    }
    let (de, d) = (cfg.d_embed, cfg.d_token);
    let lin = |i: usize, o: usize| i * o + o;
    let block = 4 * lin(d, d) + 2 * d;
    let n_fields = schema.fields().len();
    let embeddings: usize =
        schema.fields().iter().map(|f| f.vocab_size as usize * de).sum::<usize>() + (cfg.max_seq_len + 1) * de + Action::VOCAB * de;
    let encoder = lin(n_fields * de, d) + 2 * lin(de, d) + cfg.encoder_layers * block + d;
    let user_ctx = schema.count(Domain::User) + schema.count(Domain::Context);
    let item_cross = schema.count(Domain::Item) + schema.count(Domain::Cross);
    let per_decoder = if cfg.variant.has_cross_item() { 2 * block } else { block };
    let decoder = lin(user_ctx * de, d) + lin(item_cross * de, d) + cfg.decoder_layers * per_decoder;
    let h = cfg.head_hidden();
    let heads = 2 * (lin(d, h) + lin(h, 1));
    Ok(embeddings + encoder + decoder + heads)
}

/// FLOPs of one request, split by where they are spent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    /// Behavior tokenization and encoder blocks; independent of the item count.
    pub encoder: u64,
    /// `H` and item tokenization.
    pub decoder_input: u64,
    pub cross_item: u64,
    /// Includes projecting the encoder output into keys and values.
    pub user_item: u64,
    /// Both MLP heads and the output sigmoids.
    pub heads: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder_input + self.cross_item + self.user_item + self.heads
    }
}

impl std::ops::Add for FlopBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            encoder: self.encoder + o.encoder,
            decoder_input: self.decoder_input + o.decoder_input,
            cross_item: self.cross_item + o.cross_item,
            user_item: self.user_item + o.user_item,
            heads: self.heads + o.heads,
        }
    }
}

struct Dims {
    d: u64,
    de: u64,
    heads: u64,
    scaled: bool,
    n_fields: u64,
    user_ctx: u64,
    item_cross: u64,
    hidden: u64,
}

fn dims(cfg: &ModelConfig, schema: &Schema) -> Dims {
    Dims {
        d: cfg.d_token as u64,
        de: cfg.d_embed as u64,
        heads: cfg.heads as u64,
        scaled: cfg.scale_mode != ScaleMode::None,
        n_fields: schema.fields().len() as u64,
        user_ctx: (schema.count(Domain::User) + schema.count(Domain::Context)) as u64,
        item_cross: (schema.count(Domain::Item) + schema.count(Domain::Cross)) as u64,
        hidden: cfg.head_hidden() as u64,
    }
}

/// Self-attention block over `n` rows: q/k/v/o projections, three SiLUs,
/// attention, residual add, layer norm.
fn self_block(p: FlopPolicy, x: &Dims, n: u64) -> u64 {
    4 * affine_flops(p, n, x.d, x.d)
        + elementwise_flops(p, SILU_FLOPS, 3 * n * x.d)
        + attention_flops(p, n, n, x.d, x.heads, x.scaled)
        + elementwise_flops(p, ADD_FLOPS + LAYER_NORM_FLOPS, n * x.d)
}

fn encoder_flops(p: FlopPolicy, cfg: &ModelConfig, x: &Dims, n: u64) -> u64 {
    let tokenize = affine_flops(p, n, x.n_fields * x.de, x.d)
        + 2 * affine_flops(p, n, x.de, x.d)
        + elementwise_flops(p, 2 * ADD_FLOPS, n * x.d);
    tokenize + cfg.encoder_layers as u64 * self_block(p, x, n)
}

/// Memory key/value projections for every decoder block.
fn memory_projection_flops(p: FlopPolicy, cfg: &ModelConfig, x: &Dims, mem_rows: u64) -> u64 {
    cfg.decoder_layers as u64 * (2 * affine_flops(p, mem_rows, x.d, x.d) + elementwise_flops(p, SILU_FLOPS, 2 * mem_rows * x.d))
}

/// Per-shard decoder cost excluding memory projections.
fn shard_flops(p: FlopPolicy, cfg: &ModelConfig, x: &Dims, k: u64, mem_rows: u64) -> FlopBreakdown {
    let m = cfg.decoder_layers as u64;
    let decoder_input = affine_flops(p, k, x.item_cross * x.de, x.d) + elementwise_flops(p, ADD_FLOPS, k * x.d);
    let cross_item = if cfg.variant.has_cross_item() { m * self_block(p, x, k) } else { 0 };
    let user_item = m
        * (2 * affine_flops(p, k, x.d, x.d)
            + elementwise_flops(p, SILU_FLOPS, k * x.d)
            + attention_flops(p, k, mem_rows, x.d, x.heads, x.scaled)
            + elementwise_flops(p, ADD_FLOPS + LAYER_NORM_FLOPS, k * x.d));
    let head = affine_flops(p, k, x.d, x.hidden) + elementwise_flops(p, SILU_FLOPS, k * x.hidden) + affine_flops(p, k, x.hidden, 1);
    let heads = 2 * head + elementwise_flops(p, SIGMOID_FLOPS, 2 * k);
    FlopBreakdown { encoder: 0, decoder_input, cross_item, user_item, heads }
}

/// FLOPs of serving one request with `n` behaviors and `k` items, split into
/// decoder invocations of at most `shard_size` items. The encoder, `H` and the
/// memory projections run once per request.
pub fn count_flops_sharded(
    cfg: &ModelConfig,
    schema: &Schema,
    n: usize,
    k: usize,
    shard_size: usize,
    policy: FlopPolicy,
) -> FlopBreakdown {
    let x = dims(cfg, schema);
    let (n, k) = (n as u64, k as u64);
    let mem_rows = n.max(1);
    let mut out = FlopBreakdown {
        encoder: encoder_flops(policy, cfg, &x, n),
        decoder_input: affine_flops(policy, 1, x.user_ctx * x.de, x.d),
        user_item: memory_projection_flops(policy, cfg, &x, mem_rows),
        ..Default::default()
    };
    let s = shard_size.max(1) as u64;
    let mut start = 0;
    while start < k {
        let len = s.min(k - start);
        out = out + shard_flops(policy, cfg, &x, len, mem_rows);
        start += len;
    }
    out
}

/// FLOPs of one unsharded forward pass over a request with `n` behaviors and `k` items.
pub fn count_flops(cfg: &ModelConfig, schema: &Schema, n: usize, k: usize, policy: FlopPolicy) -> FlopBreakdown {
    count_flops_sharded(cfg, schema, n, k, k.max(1), policy)
}

/// Cost of scoring the same request one item per invocation, re-running the
/// encoder and user-context tokenization every time.
pub fn count_pointwise_serving_flops(cfg: &ModelConfig, schema: &Schema, n: usize, k: usize, policy: FlopPolicy) -> u64 {
    k as u64 * count_flops(cfg, schema, n, 1, policy).total()
}
