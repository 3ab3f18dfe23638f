use std::fmt::Write as _;

use crate::data::{RequestSample, Schema};
use crate::error::{Error, Result};
use crate::model::{count_flops, count_params, Homer, ModelConfig, Variant};
use crate::numeric::FlopPolicy;
use crate::train::{train_one_epoch, TrainConfig};

/// Largest number of extra encoder or decoder blocks tried when matching FLOPs.
pub const MAX_EXTRA_BLOCKS: usize = 8;
/// Accepted relative FLOPs mismatch of the matched point-wise variant.
pub const FLOPS_MATCH_TOLERANCE: f64 = 0.05;

/// Mean per-request forward FLOPs of `cfg` over `samples`.
pub fn mean_flops(cfg: &ModelConfig, schema: &Schema, samples: &[RequestSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: u64 = samples
        .iter()
        .map(|s| count_flops(cfg, schema, s.behaviors.len(), s.items.len(), FlopPolicy::ALL).total())
        .sum();
    total as f64 / samples.len() as f64
}

/// Point-wise configuration whose mean FLOPs track `full`'s.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchedPointwise {
    pub config: ModelConfig,
    /// Point-wise mean FLOPs divided by the full model's.
    pub ratio: f64,
}

impl MatchedPointwise {
    pub fn within_tolerance(&self) -> bool {
        (self.ratio - 1.0).abs() <= FLOPS_MATCH_TOLERANCE
    }
}

/// Adds encoder and user-item blocks to the point-wise variant until its mean
/// FLOPs are closest to the full variant's; ties prefer fewer extra blocks.
pub fn match_pointwise_flops(full: &ModelConfig, schema: &Schema, samples: &[RequestSample]) -> MatchedPointwise {
    let target = mean_flops(&ModelConfig { variant: Variant::Full, ..full.clone() }, schema, samples);
    let mut best: Option<(f64, usize, MatchedPointwise)> = None;
    for extra_enc in 0..=MAX_EXTRA_BLOCKS {
        for extra_dec in 0..=MAX_EXTRA_BLOCKS {
            let cfg = ModelConfig {
                variant: Variant::Pointwise,
                encoder_layers: full.encoder_layers + extra_enc,
                decoder_layers: full.decoder_layers + extra_dec,
                ..full.clone()
            };
            let ratio = if target == 0.0 { 1.0 } else { mean_flops(&cfg, schema, samples) / target };
            let key = ((ratio - 1.0).abs(), extra_enc + extra_dec);
            if best.as_ref().map_or(true, |(d, e, _)| key < (*d, *e)) {
                best = Some((key.0, key.1, MatchedPointwise { config: cfg, ratio }));
            }
        }
    }
    best.expect("search space is non-empty").2
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// `None` for the row averaged over seeds.
    pub seed: Option<u64>,
    pub auc_clk: f64,
    pub logloss_clk: f64,
    pub auc_exp: f64,
    pub params: usize,
    pub gflops_per_request: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    /// One row per (variant, seed), then one averaged row per variant.
    pub rows: Vec<AblationRow>,
    pub pointwise_match: MatchedPointwise,
}

impl AblationTable {
    pub fn averaged(&self) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(|r| r.seed.is_none())
    }

    pub fn mean_auc(&self, v: Variant) -> Option<f64> {
        self.averaged().find(|r| r.variant == v).map(|r| r.auc_clk)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,auc_clk,logloss_clk,auc_exp,params,gflops_per_request\n");
        for r in &self.rows {
            let seed = r.seed.map(|v| v.to_string()).unwrap_or_else(|| "all".into());
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.variant, seed, r.auc_clk, r.logloss_clk, r.auc_exp, r.params, r.gflops_per_request
            )
            .unwrap();
        }
        s
    }
}

/// Configuration actually trained for `variant` in an ablation.
pub fn ablation_config(base: &ModelConfig, variant: Variant, matched: &MatchedPointwise) -> ModelConfig {
    match variant {
        Variant::Pointwise => matched.config.clone(),
        v => ModelConfig { variant: v, ..base.clone() },
    }
}

/// Trains every variant once per seed with identical data, split and budget.
/// Each seed drives both parameter initialisation and batch order.
pub fn run_ablation(
    samples: &[RequestSample],
    schema: &Schema,
    base: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let matched = match_pointwise_flops(base, schema, samples);
    let mut rows = Vec::new();
    for &variant in variants {
        let cfg = ablation_config(base, variant, &matched);
        let params = count_params(&cfg, schema)?;
        let gflops = mean_flops(&cfg, schema, samples) / 1e9;
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let model = Homer::new(ModelConfig { seed, ..cfg.clone() }, schema.clone())?;
            let out = train_one_epoch(&model, samples, &TrainConfig { shuffle_seed: seed, ..train.clone() })?;
            let report = out.report.ok_or_else(|| Error::Config("ablation needs a non-empty holdout".into()))?;
            per_seed.push(AblationRow {
                variant,
                seed: Some(seed),
                auc_clk: report.auc_clk.unwrap_or(f64::NAN),
                logloss_clk: report.logloss_clk,
                auc_exp: report.auc_exp.unwrap_or(f64::NAN),
                params,
                gflops_per_request: gflops,
            });
        }
        let mean = |f: fn(&AblationRow) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
        let avg = AblationRow {
            variant,
            seed: None,
            auc_clk: mean(|r| r.auc_clk),
            logloss_clk: mean(|r| r.logloss_clk),
            auc_exp: mean(|r| r.auc_exp),
            params,
            gflops_per_request: gflops,
        };
        rows.extend(per_seed);
        rows.push(avg);
    }
    // averaged rows last, in variant order
    rows.sort_by_key(|r| r.seed.is_none());
    Ok(AblationTable { rows, pointwise_match: matched })
}
