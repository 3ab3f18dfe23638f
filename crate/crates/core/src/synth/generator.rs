use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{
    build_panoramic_sequence, Action, ActionFilter, Behavior, Dataset, Domain, FieldSpec, HistoryEntry, ItemEntry,
    RequestSample, Schema,
};
use crate::error::{Error, Result};
use crate::numeric::ops::sigmoid_scalar;
use crate::synth::{Competition, GenConfig};

// Field ids of the generated schema.
pub const FIELD_SEGMENT: u16 = 1;
pub const FIELD_ACTIVITY: u16 = 2;
pub const FIELD_CATEGORY: u16 = 3;
pub const FIELD_ITEM: u16 = 4;
pub const FIELD_PRICE: u16 = 5;
pub const FIELD_DISTANCE: u16 = 6;
pub const FIELD_SCENE: u16 = 7;
pub const FIELD_HOUR: u16 = 8;

// Positions within each domain's id vector.
const USER_ACTIVITY: usize = 1;
const ITEM_CATEGORY: usize = 0;
const ITEM_ID: usize = 1;
const ITEM_PRICE: usize = 2;
const CROSS_DISTANCE: usize = 0;
const CTX_HOUR: usize = 1;

const STREAM_WORLD: u64 = 1;
const STREAM_REQUEST: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_LABEL: u64 = 4;

/// splitmix64 finaliser over a pair of words.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, kind), index))
}

/// Schema of generated datasets. Every vocabulary reserves id 0 for "missing".
pub fn schema(cfg: &GenConfig) -> Schema {
    let f = |field_id, domain, values: u32| FieldSpec { field_id, domain, vocab_size: values + 1 };
    Schema::new(vec![
        f(FIELD_SEGMENT, Domain::User, cfg.segments),
        f(FIELD_ACTIVITY, Domain::User, cfg.activity_levels),
        f(FIELD_CATEGORY, Domain::Item, cfg.categories),
        f(FIELD_ITEM, Domain::Item, cfg.categories * cfg.items_per_category),
        f(FIELD_PRICE, Domain::Item, cfg.price_buckets),
        f(FIELD_DISTANCE, Domain::Cross, cfg.distance_buckets),
        f(FIELD_SCENE, Domain::Context, cfg.scenes),
        f(FIELD_HOUR, Domain::Context, cfg.hours),
    ])
    .expect("generated schema is well formed")
}

#[derive(Clone, Debug)]
struct UserProfile {
    segment: u32,
    activity: u32,
    /// Preferred category (0-based) in each scene.
    pref: Vec<u32>,
    /// Usual distance bucket (1-based).
    distance: u32,
}

/// Static draws shared by all requests: item catalogue and user profiles.
#[derive(Clone, Debug)]
pub struct World {
    /// Indexed by item id; slot 0 unused.
    quality: Vec<f64>,
    price: Vec<u32>,
    users: Vec<UserProfile>,
}

impl World {
    pub fn new(cfg: &GenConfig) -> Self {
        let mut rng = stream(cfg.seed, STREAM_WORLD, 0);
        let n_items = (cfg.categories * cfg.items_per_category) as usize;
        let normal = Normal::new(0.0, cfg.quality_std).expect("quality_std is validated");
        let mut quality = vec![0.0];
        let mut price = vec![0];
        for _ in 0..n_items {
            quality.push(normal.sample(&mut rng));
            price.push(rng.gen_range(1..=cfg.price_buckets));
        }
        let users = (0..cfg.users)
            .map(|_| {
                let segment = rng.gen_range(1..=cfg.segments);
                let activity = rng.gen_range(1..=cfg.activity_levels);
                let pref = if cfg.scenes <= cfg.categories {
                    sample_indices(&mut rng, cfg.categories as usize, cfg.scenes as usize)
                        .into_iter()
                        .map(|c| c as u32)
                        .collect()
                } else {
                    (0..cfg.scenes).map(|_| rng.gen_range(0..cfg.categories)).collect()
                };
                let distance = rng.gen_range(1..=cfg.distance_buckets);
                UserProfile { segment, activity, pref, distance }
            })
            .collect();
        Self { quality, price, users }
    }

    fn item_category(cfg: &GenConfig, item_id: u32) -> u32 {
        (item_id - 1) / cfg.items_per_category
    }
}

fn action_weight(a: Action) -> f64 {
    match a {
        Action::Impression => 1.0,
        Action::Click => 2.0,
        Action::Order => 3.0,
    }
}

/// Interest of the user in an item with the given category and distance
/// bucket: action-weighted share of past behaviors on the same category, plus
/// `distance_habit` times the share at the same distance. 0 without history.
fn affinity(cfg: &GenConfig, behaviors: &[Behavior], category: u32, distance: u32) -> f64 {
    let (mut hit, mut total) = (0.0, 0.0);
    for b in behaviors {
        let w = action_weight(b.action);
        if b.item_fields[ITEM_CATEGORY] == category {
            hit += w;
        }
        if b.cross_fields[CROSS_DISTANCE] == distance {
            hit += cfg.distance_habit * w;
        }
        total += w;
    }
    if total == 0.0 {
        0.0
    } else {
        hit / total
    }
}

fn bucket_effect(weight: f64, bucket: u32, buckets: u32) -> f64 {
    -weight * (bucket - 1) as f64 / (buckets - 1) as f64
}

/// Base quality `q_i` of every candidate of a request.
fn qualities(cfg: &GenConfig, world: &World, s: &RequestSample) -> Vec<f64> {
    s.items
        .iter()
        .map(|it| {
            let id = it.item_fields[ITEM_ID] as usize;
            world.quality[id]
                + bucket_effect(cfg.price_weight, it.item_fields[ITEM_PRICE], cfg.price_buckets)
                + bucket_effect(cfg.distance_weight, it.cross_fields[CROSS_DISTANCE], cfg.distance_buckets)
                + cfg.alpha * affinity(cfg, &s.behaviors, it.item_fields[ITEM_CATEGORY], it.cross_fields[CROSS_DISTANCE])
        })
        .collect()
}

/// Indices of the `slots` highest-quality items (ties broken by lower index).
fn exposed_set(q: &[f64], slots: u32) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..q.len()).collect();
    idx.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let mut out = vec![false; q.len()];
    for &i in idx.iter().take(slots as usize) {
        out[i] = true;
    }
    out
}

/// Logistic draws scaled to standard deviation `std`.
fn noise(cfg: &GenConfig, request_id: u64, k: usize) -> Vec<f64> {
    let mut rng = stream(cfg.seed, STREAM_NOISE, request_id);
    let scale = cfg.noise_std * 3f64.sqrt() / std::f64::consts::PI;
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            scale * (u / (1.0 - u)).ln()
        })
        .collect()
}

fn hour_effect(cfg: &GenConfig, hour: u32) -> f64 {
    cfg.hour_weight * (2.0 * std::f64::consts::PI * (hour - 1) as f64 / cfg.hours as f64).sin()
}

fn activity_effect(cfg: &GenConfig, activity: u32) -> f64 {
    if cfg.activity_levels < 2 {
        return 0.0;
    }
    cfg.activity_weight * (2.0 * (activity - 1) as f64 / (cfg.activity_levels - 1) as f64 - 1.0)
}

/// Click probability of every item given qualities, exposure and noise.
fn click_probs(cfg: &GenConfig, s: &RequestSample, q: &[f64], exposed: &[bool], eps: &[f64]) -> Vec<f64> {
    let base = cfg.click_bias + hour_effect(cfg, s.ctx_fields[CTX_HOUR]) + activity_effect(cfg, s.user_fields[USER_ACTIVITY]);
    (0..q.len())
        .map(|i| {
            let others = (0..q.len()).filter(|&j| j != i && exposed[j]).map(|j| q[j]);
            let comp = match cfg.competition {
                Competition::Max => others.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))).unwrap_or(0.0),
                Competition::Sum => others.sum(),
            };
            sigmoid_scalar(base + q[i] - cfg.gamma * comp + eps[i])
        })
        .collect()
}

/// Generates `cfg.requests` requests in chronological order.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = World::new(cfg);
    let mut samples: Vec<RequestSample> = Vec::with_capacity(cfg.requests as usize);
    // per user: (sample index, chosen item, action)
    let mut history: Vec<Vec<(usize, usize, Action)>> = vec![Vec::new(); cfg.users as usize];
    let cap = cfg.history_cap as usize;
    for r in 0..cfg.requests {
        let mut rng = stream(cfg.seed, STREAM_REQUEST, r);
        let u = rng.gen_range(0..cfg.users) as usize;
        let profile = &world.users[u];
        let scene = rng.gen_range(1..=cfg.scenes);
        let hour = rng.gen_range(1..=cfg.hours);
        let k = rng.gen_range(cfg.k_min..=cfg.k_max);
        let items: Vec<ItemEntry> = (0..k)
            .map(|_| {
                let cat = if rng.gen_bool(cfg.pref_prob) {
                    profile.pref[(scene - 1) as usize]
                } else {
                    rng.gen_range(0..cfg.categories)
                };
                let id = cat * cfg.items_per_category + rng.gen_range(1..=cfg.items_per_category);
                ItemEntry {
                    item_fields: vec![cat + 1, id, world.price[id as usize]],
                    cross_fields: vec![if rng.gen_bool(cfg.pref_prob) {
                        profile.distance
                    } else {
                        rng.gen_range(1..=cfg.distance_buckets)
                    }],
                    exposed: false,
                    clicked: false,
                }
            })
            .collect();

        let past = &history[u];
        let recent = &past[past.len().saturating_sub(cap)..];
        let entries: Vec<HistoryEntry<'_>> = recent
            .iter()
            .map(|&(idx, chosen_item, action)| HistoryEntry { request: &samples[idx], chosen_item, action })
            .collect();
        let behaviors = build_panoramic_sequence(&entries, cap, ActionFilter::All)?;

        let mut s = RequestSample {
            request_id: r,
            user_fields: vec![profile.segment, profile.activity],
            ctx_fields: vec![scene, hour],
            behaviors,
            items,
        };
        let q = qualities(cfg, &world, &s);
        let exposed = exposed_set(&q, cfg.slots);
        let eps = noise(cfg, r, s.items.len());
        let p = click_probs(cfg, &s, &q, &exposed, &eps);
        let mut labels = stream(cfg.seed, STREAM_LABEL, r);
        for (i, it) in s.items.iter_mut().enumerate() {
            let draw: f64 = labels.gen();
            it.exposed = exposed[i];
            it.clicked = exposed[i] && draw < p[i];
        }
        let order_draw: f64 = labels.gen();

        let (chosen, action) = match s.items.iter().position(|it| it.clicked) {
            Some(i) if order_draw < cfg.order_prob => (i, Action::Order),
            Some(i) => (i, Action::Click),
            None => {
                let top = (0..q.len()).filter(|&i| exposed[i]).max_by(|&a, &b| q[a].total_cmp(&q[b]).then(b.cmp(&a)));
                (top.expect("at least one item is exposed"), Action::Impression)
            }
        };
        history[u].push((samples.len(), chosen, action));
        samples.push(s);
    }
    Ok(Dataset { schema: schema(cfg), tag: cfg.to_text(), samples })
}

/// Exact click probability of every item of a generated request.
///
/// Recomputes qualities, exposure and the request's noise draw from `cfg`;
/// fails with `UnknownRequest` when the request cannot have come from it.
pub fn oracle_click_prob(request: &RequestSample, cfg: &GenConfig) -> Result<Vec<f64>> {
    oracle_with_world(request, cfg, &World::new(cfg))
}

/// [`oracle_click_prob`] with a prebuilt world, for scoring many requests.
pub fn oracle_with_world(request: &RequestSample, cfg: &GenConfig, world: &World) -> Result<Vec<f64>> {
    let unknown = || Error::UnknownRequest(request.request_id);
    if request.request_id >= cfg.requests || request.items.is_empty() {
        return Err(unknown());
    }
    let n_items = world.quality.len() as u32;
    let well_formed = request.ctx_fields.len() == 2
        && request.user_fields.len() == 2
        && request.items.iter().all(|it| {
            it.item_fields.len() == 3
                && it.cross_fields.len() == 1
                && (1..n_items).contains(&it.item_fields[ITEM_ID])
                && World::item_category(cfg, it.item_fields[ITEM_ID]) + 1 == it.item_fields[ITEM_CATEGORY]
        })
        && request.behaviors.iter().all(|b| b.ctx_fields.len() == 2 && b.item_fields.len() == 3);
    if !well_formed {
        return Err(unknown());
    }
    let q = qualities(cfg, world, request);
    let exposed = exposed_set(&q, cfg.slots);
    if request.items.iter().zip(&exposed).any(|(it, &e)| it.exposed != e) {
        return Err(unknown());
    }
    let eps = noise(cfg, request.request_id, request.items.len());
    Ok(click_probs(cfg, request, &q, &exposed, &eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_dataset, validate_request, Limits};

    const CTX_SCENE: usize = 0;

    fn small() -> GenConfig {
        GenConfig { users: 40, requests: 600, ..Default::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = encode_dataset(&generate_dataset(&small()).unwrap()).unwrap();
        let b = encode_dataset(&generate_dataset(&small()).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = encode_dataset(&generate_dataset(&GenConfig { seed: 1, ..small() }).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_are_valid_and_exposure_is_capped() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 600);
        for s in &ds.samples {
            assert!(validate_request(s, &ds.schema, Limits::default()).is_empty());
            let exposed = s.items.iter().filter(|i| i.exposed).count();
            assert_eq!(exposed, (cfg.slots as usize).min(s.items.len()));
            assert!(s.items.iter().all(|i| i.exposed || !i.clicked));
            assert!(s.behaviors.len() <= cfg.history_cap as usize);
            assert!((cfg.k_min as usize..=cfg.k_max as usize).contains(&s.items.len()));
        }
        assert!(ds.samples.iter().any(|s| s.behaviors.len() > 5));
    }

    #[test]
    fn oracle_reproduces_generation() {
        let cfg = small();
        let ds = generate_dataset(&cfg).unwrap();
        let world = World::new(&cfg);
        for s in &ds.samples {
            let p = oracle_with_world(s, &cfg, &world).unwrap();
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let mut bad = ds.samples[3].clone();
        bad.request_id = 10_000;
        assert!(matches!(oracle_click_prob(&bad, &cfg), Err(Error::UnknownRequest(10_000))));
        let mut flipped = ds.samples[3].clone();
        flipped.items.iter_mut().for_each(|i| i.exposed = !i.exposed);
        assert!(oracle_click_prob(&flipped, &cfg).is_err());
    }

    fn hand_request(items: &[(u32, u32)]) -> RequestSample {
        RequestSample {
            request_id: 0,
            user_fields: vec![1, 1],
            ctx_fields: vec![1, 1],
            behaviors: vec![],
            items: items
                .iter()
                .map(|&(id, price)| ItemEntry {
                    item_fields: vec![(id - 1) / 25 + 1, id, price],
                    cross_fields: vec![1],
                    exposed: true,
                    clicked: false,
                })
                .collect(),
        }
    }

    /// Config whose click logit reduces to `q_i - gamma * competitor`.
    fn bare(gamma: f64) -> GenConfig {
        GenConfig {
            gamma,
            noise_std: 0.0,
            hour_weight: 0.0,
            activity_weight: 0.0,
            slots: 3,
            ..small()
        }
    }

    #[test]
    fn zero_noise_zero_gamma_is_sigmoid_of_quality() {
        let cfg = bare(0.0);
        let world = World::new(&cfg);
        let s = hand_request(&[(7, world.price[7]), (60, world.price[60])]);
        let p = oracle_with_world(&s, &cfg, &world).unwrap();
        let q = |id: usize| world.quality[id] + bucket_effect(cfg.price_weight, world.price[id], cfg.price_buckets);
        assert_eq!(p[0], sigmoid_scalar(q(7)));
        assert_eq!(p[1], sigmoid_scalar(q(60)));
    }

    #[test]
    fn two_item_competition_matches_formula() {
        let cfg = bare(0.8);
        let world = World::new(&cfg);
        let s = hand_request(&[(7, world.price[7]), (60, world.price[60])]);
        let p = oracle_with_world(&s, &cfg, &world).unwrap();
        let q = |id: usize| world.quality[id] + bucket_effect(cfg.price_weight, world.price[id], cfg.price_buckets);
        let expect0 = 1.0 / (1.0 + (-(q(7) - 0.8 * q(60))).exp());
        let expect1 = 1.0 / (1.0 + (-(q(60) - 0.8 * q(7))).exp());
        assert!((p[0] - expect0).abs() < 1e-15);
        assert!((p[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn duplicating_the_strongest_item_lowers_its_own_probability() {
        let cfg = bare(0.8);
        let world = World::new(&cfg);
        let best = (1..world.quality.len()).max_by(|&a, &b| world.quality[a].total_cmp(&world.quality[b])).unwrap() as u32;
        let weak = (1..world.quality.len()).min_by(|&a, &b| world.quality[a].total_cmp(&world.quality[b])).unwrap() as u32;
        let pair = hand_request(&[(best, world.price[best as usize]), (weak, world.price[weak as usize])]);
        let dup = hand_request(&[(best, world.price[best as usize]), (best, world.price[best as usize])]);
        let p_pair = oracle_with_world(&pair, &cfg, &world).unwrap();
        let p_dup = oracle_with_world(&dup, &cfg, &world).unwrap();
        let qb = world.quality[best as usize] + bucket_effect(cfg.price_weight, world.price[best as usize], cfg.price_buckets);
        assert!((p_dup[0] - sigmoid_scalar(qb - 0.8 * qb)).abs() < 1e-15);
        assert!(p_dup[0] < p_pair[0]);
        assert_eq!(p_dup[0], p_dup[1]);
    }

    #[test]
    fn zero_gamma_ignores_co_exposed_items() {
        let cfg = bare(0.0);
        let world = World::new(&cfg);
        let a = hand_request(&[(7, world.price[7]), (60, world.price[60])]);
        let b = hand_request(&[(7, world.price[7]), (150, world.price[150])]);
        assert_eq!(oracle_with_world(&a, &cfg, &world).unwrap()[0], oracle_with_world(&b, &cfg, &world).unwrap()[0]);
    }

    #[test]
    fn sum_competition_adds_competitors() {
        let cfg = GenConfig { competition: Competition::Sum, ..bare(0.5) };
        let world = World::new(&cfg);
        let s = hand_request(&[(7, world.price[7]), (60, world.price[60]), (150, world.price[150])]);
        let p = oracle_with_world(&s, &cfg, &world).unwrap();
        let q = |id: usize| world.quality[id] + bucket_effect(cfg.price_weight, world.price[id], cfg.price_buckets);
        assert!((p[0] - sigmoid_scalar(q(7) - 0.5 * (q(60) + q(150)))).abs() < 1e-15);
    }

    #[test]
    fn histories_are_panoramic() {
        let ds = generate_dataset(&small()).unwrap();
        let s = ds.samples.iter().find(|s| s.behaviors.len() > 3).unwrap();
        let scenes: std::collections::HashSet<u32> = s.behaviors.iter().map(|b| b.ctx_fields[CTX_SCENE]).collect();
        assert!(scenes.iter().all(|&v| v >= 1));
        assert!(s.behaviors.windows(2).all(|w| w[1].position == w[0].position + 1));
    }
}
