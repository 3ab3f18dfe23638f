//! The HoMer architecture, its parameter layout and cost accounting.

mod config;
mod cost;
mod homer;
mod layout;

pub use config::{ModelConfig, Variant, WeightInit};
pub use cost::{count_flops, count_flops_sharded, count_params, count_pointwise_serving_flops, FlopBreakdown};
pub use homer::{tensor_of, ForwardOutput, Homer, ItemSet, Logits, LossNodes, LossValues, Memory, MemoryKv};
pub use layout::{slot_specs, AttnBlock, DecoderBlock, Layout, Linear, Mlp};
