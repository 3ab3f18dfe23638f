//! Online prediction: item sharding, single-invocation set-wise inference
//! and the set-wise vs point-wise serving benchmark.

mod bench;
mod predict;
mod shard;

pub use bench::{bench, percentile, BenchConfig, BenchReport, BenchRow, ServingMode};
pub use predict::{predict_pointwise, predict_request, Prediction};
pub use shard::{shard_items, ShardPlan, DEFAULT_SHARD_SIZE};
