use crate::data::{JaggedBatch, RequestSample};
use crate::error::{Error, Result};
use crate::model::{Homer, ItemSet};
use crate::numeric::{FlopPolicy, Graph, ParamStore, Real};
use crate::serving::shard_items;

/// Per-item probabilities of one served request, in original item order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<F> {
    pub p_exp: Vec<F>,
    pub p_clk: Vec<F>,
    /// FLOPs executed, as counted by the graph.
    pub flops: u64,
    /// Decoder invocations.
    pub shards: usize,
}

/// Scores every item of `request` with one encoder pass and one decoder pass
/// per shard of at most `shard_size` items.
///
/// The encoder output, `H` and the user-item keys/values projected from the
/// encoder output are computed once and shared by all shards. Cross-item
/// attention only sees items of the same shard.
pub fn predict_request<F: Real>(
    model: &Homer,
    params: &ParamStore<F>,
    request: &RequestSample,
    shard_size: usize,
) -> Result<Prediction<F>> {
    if shard_size == 0 {
        return Err(Error::Config("shard size must be >= 1".into()));
    }
    if request.items.is_empty() {
        return Err(Error::Invalid(format!("request {} has no items", request.request_id)));
    }
    let lay = model.layout(params)?;
    let mut g = Graph::with_policy(params, FlopPolicy::ALL);
    let batch = JaggedBatch::from_samples([request]);
    let memory = model.encode(&mut g, &lay, &batch)?;
    let kv = model.project_memory(&mut g, &lay, &memory)?;
    let h = model.user_context(&mut g, &lay, &batch.requests)?;

    let plan = shard_items(request.items.len(), shard_size);
    let mut p_exp = Vec::with_capacity(request.items.len());
    let mut p_clk = Vec::with_capacity(request.items.len());
    for range in &plan.ranges {
        let items = ItemSet { items: &request.items[range.clone()], offsets: vec![0, range.len()] };
        let logits = model.decode(&mut g, &lay, h, &items, &kv, &memory.offsets)?;
        let e = g.sigmoid(logits.exp);
        let c = g.sigmoid(logits.clk);
        p_exp.extend_from_slice(g.value(e).data());
        p_clk.extend_from_slice(g.value(c).data());
    }
    Ok(Prediction { p_exp, p_clk, flops: g.flops(), shards: plan.len() })
}

/// Simulated point-wise serving: one full forward pass per item, each seeing
/// the request's user, context and sequence but no other item.
pub fn predict_pointwise<F: Real>(model: &Homer, params: &ParamStore<F>, request: &RequestSample) -> Result<Prediction<F>> {
    let mut out = Prediction { p_exp: Vec::new(), p_clk: Vec::new(), flops: 0, shards: 0 };
    let mut single = RequestSample { items: Vec::with_capacity(1), ..request.clone() };
    for item in &request.items {
        single.items.clear();
        single.items.push(item.clone());
        let (o, flops) = model.forward_counted(params, &JaggedBatch::from_samples([&single]), FlopPolicy::ALL)?;
        out.p_exp.extend(o.p_exp);
        out.p_clk.extend(o.p_clk);
        out.flops += flops;
        out.shards += 1;
    }
    Ok(out)
}
