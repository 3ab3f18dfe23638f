//! Inputs shared by the criterion benches.

use homer_core::data::{Action, Behavior, Domain, ItemEntry, RequestSample, Schema};
use homer_core::model::{Homer, ModelConfig};
use homer_core::synth::{schema, GenConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn bench_schema() -> Schema {
    schema(&GenConfig::default())
}

pub fn model(cfg: ModelConfig) -> Homer {
    Homer::new(cfg, bench_schema()).expect("valid bench config")
}

/// A request with `n` behaviors and `k` candidates drawn uniformly from the schema's vocabularies.
pub fn request(schema: &Schema, n: usize, k: usize, seed: u64) -> RequestSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = |d: Domain, rng: &mut ChaCha8Rng| -> Vec<u32> { schema.in_domain(d).map(|f| rng.gen_range(1..f.vocab_size)).collect() };
    let behaviors = (0..n)
        .map(|i| Behavior {
            user_fields: ids(Domain::User, &mut rng),
            item_fields: ids(Domain::Item, &mut rng),
            cross_fields: ids(Domain::Cross, &mut rng),
            ctx_fields: ids(Domain::Context, &mut rng),
            position: i as u32 + 1,
            action: Action::Click,
        })
        .collect();
    let items = (0..k)
        .map(|_| ItemEntry {
            item_fields: ids(Domain::Item, &mut rng),
            cross_fields: ids(Domain::Cross, &mut rng),
            exposed: false,
            clicked: false,
        })
        .collect();
    RequestSample { request_id: seed, user_fields: ids(Domain::User, &mut rng), ctx_fields: ids(Domain::Context, &mut rng), behaviors, items }
}
