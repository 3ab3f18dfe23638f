//! Run configuration: one plain-text `key = value` file with section prefixes.

use std::fmt::Write as _;
use std::path::PathBuf;

use homer_core::model::{ModelConfig, Variant, WeightInit};
use homer_core::numeric::ScaleMode;
use homer_core::serving::DEFAULT_SHARD_SIZE;
use homer_core::synth::GenConfig;
use homer_core::train::TrainConfig;
use homer_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSettings {
    pub shard_size: usize,
    /// Requests taken from the end of the dataset; 0 means all.
    pub max_requests: usize,
    pub bucket_edges: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSettings {
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    pub requests: u64,
    pub max_behaviors: u32,
    pub max_items: u32,
    /// Half-width of the uniform noise added to the initial parameters.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Paths {
    pub fn dataset(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.bin"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

/// Everything one command needs. `seed` seeds parameter init, batch order and,
/// unless `gen.seed` is given, the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    gen_seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationSettings,
    pub bench: BenchSettings,
    pub gradcheck: GradcheckSettings,
    pub paths: Paths,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value `{}` for `{key}`", value.trim())))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn set_model(m: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    let full = format!("model.{key}");
    let bad = || Error::Config(format!("bad value `{}` for `{full}`", value.trim()));
    match key {
        "encoder_layers" => m.encoder_layers = parse(&full, value)?,
        "decoder_layers" => m.decoder_layers = parse(&full, value)?,
        "d_embed" => m.d_embed = parse(&full, value)?,
        "d_token" => m.d_token = parse(&full, value)?,
        "heads" => m.heads = parse(&full, value)?,
        "eps" => m.eps = parse(&full, value)?,
        "scale_mode" => m.scale_mode = ScaleMode::parse(value.trim()).ok_or_else(bad)?,
        "lambda" => m.lambda = parse(&full, value)?,
        "variant" => m.variant = Variant::parse(value.trim()).ok_or_else(bad)?,
        "max_seq_len" => m.max_seq_len = parse(&full, value)?,
        "weight_init" => m.weight_init = WeightInit::parse(value.trim()).ok_or_else(bad)?,
        _ => return Err(Error::Config(format!("unknown key `{full}`"))),
    }
    Ok(())
}

fn set_train(t: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let full = format!("train.{key}");
    match key {
        "lr" => t.lr = parse(&full, value)?,
        "batch_size" => t.batch_size = parse(&full, value)?,
        "holdout_fraction" => t.holdout_fraction = parse(&full, value)?,
        "eval_batch_size" => t.eval_batch_size = parse(&full, value)?,
        _ => return Err(Error::Config(format!("unknown key `{full}`"))),
    }
    Ok(())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gen: GenConfig::default(),
            gen_seed: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationSettings { seeds: vec![0, 1, 2], variants: Variant::ALL.to_vec() },
            bench: BenchSettings {
                shard_size: DEFAULT_SHARD_SIZE,
                max_requests: 500,
                bucket_edges: (0..11).map(|i| 1usize << i).collect(),
            },
            gradcheck: GradcheckSettings {
                coordinates: 200,
                step: 1e-5,
                tolerance: 1e-4,
                requests: 3,
                max_behaviors: 6,
                max_items: 4,
                jitter: 0.5,
            },
            paths: Paths { out: PathBuf::from("."), dataset: None, checkpoint: None },
        }
    }
}

impl RunConfig {
    /// Parses a config file. `seed_override` (from `--seed`) satisfies the
    /// mandatory `seed` key.
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seed = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            match k.split_once('.') {
                None if k == "seed" => seed = Some(parse(k, v)?),
                Some(("gen", "seed")) => cfg.gen_seed = Some(parse(k, v)?),
                Some(("gen", key)) => cfg.gen.set(key, v).map_err(|e| match e {
                    Error::Config(m) => Error::Config(m.replace(&format!("`{key}`"), &format!("`{k}`"))),
                    e => e,
                })?,
                Some(("model", "seed")) => return Err(Error::Config("`model.seed` is set by `seed`".into())),
                Some(("model", key)) => set_model(&mut cfg.model, key, v)?,
                Some(("train", key)) => set_train(&mut cfg.train, key, v)?,
                Some(("ablation", "seeds")) => cfg.ablation.seeds = parse_list(k, v)?,
                Some(("ablation", "variants")) => {
                    cfg.ablation.variants = v
                        .split(',')
                        .map(|s| Variant::parse(s.trim()).ok_or_else(|| Error::Config(format!("bad value `{}` for `{k}`", s.trim()))))
                        .collect::<Result<_>>()?
                }
                Some(("bench", "shard_size")) => cfg.bench.shard_size = parse(k, v)?,
                Some(("bench", "max_requests")) => cfg.bench.max_requests = parse(k, v)?,
                Some(("bench", "bucket_edges")) => cfg.bench.bucket_edges = parse_list(k, v)?,
                Some(("gradcheck", "coordinates")) => cfg.gradcheck.coordinates = parse(k, v)?,
                Some(("gradcheck", "step")) => cfg.gradcheck.step = parse(k, v)?,
                Some(("gradcheck", "tolerance")) => cfg.gradcheck.tolerance = parse(k, v)?,
                Some(("gradcheck", "requests")) => cfg.gradcheck.requests = parse(k, v)?,
                Some(("gradcheck", "max_behaviors")) => cfg.gradcheck.max_behaviors = parse(k, v)?,
                Some(("gradcheck", "max_items")) => cfg.gradcheck.max_items = parse(k, v)?,
                Some(("gradcheck", "jitter")) => cfg.gradcheck.jitter = parse(k, v)?,
                Some(("paths", "out")) => cfg.paths.out = PathBuf::from(v.trim()),
                Some(("paths", "dataset")) => cfg.paths.dataset = Some(PathBuf::from(v.trim())),
                Some(("paths", "checkpoint")) => cfg.paths.checkpoint = Some(PathBuf::from(v.trim())),
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        let seed = seed_override
            .or(seed)
            .ok_or_else(|| Error::Config("`seed` is mandatory (config key or --seed)".into()))?;
        cfg.set_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.shuffle_seed = seed;
        self.gen.seed = self.gen_seed.unwrap_or(seed);
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.ablation.seeds.is_empty() || self.ablation.variants.is_empty() {
            return Err(Error::Config("ablation needs at least one seed and one variant".into()));
        }
        if self.bench.shard_size == 0 {
            return Err(Error::Config("bench.shard_size must be >= 1".into()));
        }
        let g = &self.gradcheck;
        if g.coordinates == 0 || !(g.step > 0.0) || !(g.tolerance > 0.0) || g.requests == 0 || g.max_items == 0 {
            return Err(Error::Config("gradcheck settings must be positive".into()));
        }
        Ok(())
    }

    /// Every setting that influences results, one `key=value` per line in a
    /// fixed order. Paths are excluded.
    pub fn canonical_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let join = |v: Vec<String>| v.join(",");
        let mut lines: Vec<(String, String)> = vec![("seed".into(), self.seed.to_string())];
        lines.extend(self.gen.entries().into_iter().map(|(k, v)| (format!("gen.{k}"), v)));
        lines.extend([
            ("model.encoder_layers".into(), m.encoder_layers.to_string()),
            ("model.decoder_layers".into(), m.decoder_layers.to_string()),
            ("model.d_embed".into(), m.d_embed.to_string()),
            ("model.d_token".into(), m.d_token.to_string()),
            ("model.heads".into(), m.heads.to_string()),
            ("model.eps".into(), m.eps.to_string()),
            ("model.scale_mode".into(), m.scale_mode.name().to_string()),
            ("model.lambda".into(), m.lambda.to_string()),
            ("model.variant".into(), m.variant.name().to_string()),
            ("model.max_seq_len".into(), m.max_seq_len.to_string()),
            ("model.weight_init".into(), m.weight_init.name().to_string()),
            ("train.lr".into(), t.lr.to_string()),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.holdout_fraction".into(), t.holdout_fraction.to_string()),
            ("train.eval_batch_size".into(), t.eval_batch_size.to_string()),
            ("ablation.seeds".into(), join(self.ablation.seeds.iter().map(|s| s.to_string()).collect())),
            ("ablation.variants".into(), join(self.ablation.variants.iter().map(|v| v.name().to_string()).collect())),
            ("bench.shard_size".into(), self.bench.shard_size.to_string()),
            ("bench.max_requests".into(), self.bench.max_requests.to_string()),
            ("bench.bucket_edges".into(), join(self.bench.bucket_edges.iter().map(|s| s.to_string()).collect())),
            ("gradcheck.coordinates".into(), self.gradcheck.coordinates.to_string()),
            ("gradcheck.step".into(), self.gradcheck.step.to_string()),
            ("gradcheck.tolerance".into(), self.gradcheck.tolerance.to_string()),
            ("gradcheck.requests".into(), self.gradcheck.requests.to_string()),
            ("gradcheck.max_behaviors".into(), self.gradcheck.max_behaviors.to_string()),
            ("gradcheck.max_items".into(), self.gradcheck.max_items.to_string()),
            ("gradcheck.jitter".into(), self.gradcheck.jitter.to_string()),
        ]);
        let mut s = String::new();
        for (k, v) in lines {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    /// SHA-256 of [`RunConfig::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::parse("model.d_token = 8\n", None).unwrap_err();
        assert!(err.to_string().contains("seed"));
        assert_eq!(RunConfig::parse("", Some(4)).unwrap().seed, 4);
    }

    #[test]
    fn sections_route_to_their_configs() {
        let text = "seed = 9\ngen.requests = 100\nmodel.variant = pointwise\ntrain.lr = 0.01\nablation.seeds = 1,2\npaths.out = /tmp/x\n";
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.gen.requests, 100);
        assert_eq!(c.gen.seed, 9);
        assert_eq!(c.model.seed, 9);
        assert_eq!(c.train.shuffle_seed, 9);
        assert_eq!(c.model.variant, Variant::Pointwise);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.ablation.seeds, vec![1, 2]);
        assert_eq!(c.paths.dataset(), PathBuf::from("/tmp/x/dataset.bin"));
    }

    #[test]
    fn explicit_generator_seed_survives_override() {
        let c = RunConfig::parse("seed = 1\ngen.seed = 77\n", Some(5)).unwrap();
        assert_eq!((c.seed, c.gen.seed, c.model.seed), (5, 77, 5));
    }

    #[test]
    fn unknown_keys_are_named() {
        for key in ["bogus", "model.bogus", "gen.bogus", "train.bogus", "paths.bogus"] {
            let err = RunConfig::parse(&format!("seed = 1\n{key} = 3\n"), None).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn hash_ignores_paths_and_tracks_settings() {
        let a = RunConfig::parse("seed = 1\npaths.out = a\n", None).unwrap();
        let b = RunConfig::parse("seed = 1\npaths.out = b\n", None).unwrap();
        let c = RunConfig::parse("seed = 2\n", None).unwrap();
        let d = RunConfig::parse("seed = 1\nmodel.lambda = 0.5\n", None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_ne!(a.hash(), d.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
