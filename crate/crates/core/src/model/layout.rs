use crate::data::{Action, Domain, Schema};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, WeightInit};
use crate::numeric::{Init, ParamStore, Real, SlotSpec};

const WEIGHT_STD: f64 = 0.02;

/// Slot ids of a fully connected layer.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

/// Q/K/V/output projections plus the layer norm that closes an attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttnBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln_scale: usize,
    pub ln_shift: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub cross_item: Option<AttnBlock>,
    pub user_item: AttnBlock,
}

#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

/// Resolved slot ids for every parameter of the model.
#[derive(Clone, Debug)]
pub struct Layout {
    /// One embedding table per schema field, in schema order.
    pub field_tables: Vec<usize>,
    pub position_table: usize,
    pub action_table: usize,
    pub tok_behavior: Linear,
    pub tok_position: Linear,
    pub tok_action: Linear,
    pub encoder: Vec<AttnBlock>,
    pub null_behavior: usize,
    pub tok_user_ctx: Linear,
    pub tok_item: Linear,
    pub decoder: Vec<DecoderBlock>,
    pub head_exp: Mlp,
    pub head_clk: Mlp,
}

fn weight_std(init: WeightInit, d_in: usize) -> f64 {
    match init {
        WeightInit::Fixed => WEIGHT_STD,
        WeightInit::FanIn => 1.0 / (d_in.max(1) as f64).sqrt(),
    }
}

fn linear_specs(out: &mut Vec<SlotSpec>, init: WeightInit, name: &str, d_in: usize, d_out: usize) {
    out.push(SlotSpec::new(format!("{name}.w"), d_in, d_out, Init::TruncNormal(weight_std(init, d_in))));
    out.push(SlotSpec::new(format!("{name}.b"), 1, d_out, Init::Zeros));
}

fn block_specs(out: &mut Vec<SlotSpec>, init: WeightInit, name: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        linear_specs(out, init, &format!("{name}.{p}"), d, d);
    }
    out.push(SlotSpec::new(format!("{name}.ln.scale"), 1, d, Init::Ones));
    out.push(SlotSpec::new(format!("{name}.ln.shift"), 1, d, Init::Zeros));
}

/// Every parameter slot of a model, in canonical order.
pub fn slot_specs(cfg: &ModelConfig, schema: &Schema) -> Vec<SlotSpec> {
    let (de, d, wi) = (cfg.d_embed, cfg.d_token, cfg.weight_init);
    let mut s = Vec::new();
    for f in schema.fields() {
        s.push(SlotSpec::new(format!("emb.f{}", f.field_id), f.vocab_size as usize, de, Init::TruncNormal(WEIGHT_STD)));
    }
    s.push(SlotSpec::new("emb.position", cfg.max_seq_len + 1, de, Init::TruncNormal(WEIGHT_STD)));
    s.push(SlotSpec::new("emb.action", Action::VOCAB, de, Init::TruncNormal(WEIGHT_STD)));
    linear_specs(&mut s, wi, "enc.tok.behavior", schema.fields().len() * de, d);
    linear_specs(&mut s, wi, "enc.tok.position", de, d);
    linear_specs(&mut s, wi, "enc.tok.action", de, d);
    for l in 0..cfg.encoder_layers {
        block_specs(&mut s, wi, &format!("enc.{l}"), d);
    }
    s.push(SlotSpec::new("enc.null", 1, d, Init::TruncNormal(WEIGHT_STD)));
    let user_ctx = schema.count(Domain::User) + schema.count(Domain::Context);
    let item_cross = schema.count(Domain::Item) + schema.count(Domain::Cross);
    linear_specs(&mut s, wi, "dec.tok.user_ctx", user_ctx * de, d);
    linear_specs(&mut s, wi, "dec.tok.item", item_cross * de, d);
    for m in 0..cfg.decoder_layers {
        if cfg.variant.has_cross_item() {
            block_specs(&mut s, wi, &format!("dec.{m}.cross"), d);
        }
        block_specs(&mut s, wi, &format!("dec.{m}.user"), d);
    }
    let h = cfg.head_hidden();
    for head in ["head.exp", "head.clk"] {
        linear_specs(&mut s, wi, &format!("{head}.0"), d, h);
        linear_specs(&mut s, wi, &format!("{head}.1"), h, 1);
    }
    s
}

struct Resolver<'a, F: Real> {
    params: &'a ParamStore<F>,
}

impl<F: Real> Resolver<'_, F> {
    fn slot(&self, name: &str) -> Result<usize> {
        self.params.slot_id(name).ok_or_else(|| Error::Invalid(format!("parameter slot `{name}` is missing")))
    }
    fn linear(&self, name: &str) -> Result<Linear> {
        Ok(Linear { w: self.slot(&format!("{name}.w"))?, b: self.slot(&format!("{name}.b"))? })
    }
    fn block(&self, name: &str) -> Result<AttnBlock> {
        Ok(AttnBlock {
            q: self.linear(&format!("{name}.q"))?,
            k: self.linear(&format!("{name}.k"))?,
            v: self.linear(&format!("{name}.v"))?,
            o: self.linear(&format!("{name}.o"))?,
            ln_scale: self.slot(&format!("{name}.ln.scale"))?,
            ln_shift: self.slot(&format!("{name}.ln.shift"))?,
        })
    }
    fn mlp(&self, name: &str) -> Result<Mlp> {
        Ok(Mlp { hidden: self.linear(&format!("{name}.0"))?, out: self.linear(&format!("{name}.1"))? })
    }
}

impl Layout {
    /// Looks every slot up by name and checks its shape against the config.
    pub fn resolve<F: Real>(cfg: &ModelConfig, schema: &Schema, params: &ParamStore<F>) -> Result<Self> {
        for spec in slot_specs(cfg, schema) {
            let t = params
                .by_name(&spec.name)
                .ok_or_else(|| Error::Invalid(format!("parameter slot `{}` is missing", spec.name)))?;
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::Shape(format!(
                    "slot `{}` is {:?}, config expects {:?}",
                    spec.name,
                    t.shape(),
                    (spec.rows, spec.cols)
                )));
            }
        }
        let r = Resolver { params };
        Ok(Layout {
            field_tables: schema.fields().iter().map(|f| r.slot(&format!("emb.f{}", f.field_id))).collect::<Result<_>>()?,
            position_table: r.slot("emb.position")?,
            action_table: r.slot("emb.action")?,
            tok_behavior: r.linear("enc.tok.behavior")?,
            tok_position: r.linear("enc.tok.position")?,
            tok_action: r.linear("enc.tok.action")?,
            encoder: (0..cfg.encoder_layers).map(|l| r.block(&format!("enc.{l}"))).collect::<Result<_>>()?,
            null_behavior: r.slot("enc.null")?,
            tok_user_ctx: r.linear("dec.tok.user_ctx")?,
            tok_item: r.linear("dec.tok.item")?,
            decoder: (0..cfg.decoder_layers)
                .map(|m| {
                    Ok(DecoderBlock {
                        cross_item: if cfg.variant.has_cross_item() {
                            Some(r.block(&format!("dec.{m}.cross"))?)
                        } else {
                            None
                        },
                        user_item: r.block(&format!("dec.{m}.user"))?,
                    })
                })
                .collect::<Result<_>>()?,
            head_exp: r.mlp("head.exp")?,
            head_clk: r.mlp("head.clk")?,
        })
    }
}
