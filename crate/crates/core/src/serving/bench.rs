use std::fmt::Write as _;
use std::time::Instant;

use crate::data::{JaggedBatch, RequestSample};
use crate::error::{Error, Result};
use crate::model::{count_flops_sharded, count_pointwise_serving_flops, Homer};
use crate::numeric::{FlopPolicy, ParamStore, Real};
use crate::serving::{predict_pointwise, predict_request, DEFAULT_SHARD_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServingMode {
    /// Encoder once per request, decoder once per shard.
    SetWise,
    /// Encoder re-run for every item.
    PointWise,
}

impl ServingMode {
    pub fn name(self) -> &'static str {
        match self {
            ServingMode::SetWise => "set_wise",
            ServingMode::PointWise => "point_wise",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub shard_size: usize,
    /// Lower edges of the item-count buckets, ascending; the first must be 1.
    pub bucket_edges: Vec<usize>,
    /// Also compare set-wise outputs with an unsharded forward pass.
    pub measure_divergence: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shard_size: DEFAULT_SHARD_SIZE,
            bucket_edges: (0..11).map(|i| 1usize << i).collect(),
            measure_divergence: true,
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        let e = &self.bucket_edges;
        if self.shard_size == 0 || e.first() != Some(&1) || e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("bench needs shard_size >= 1 and ascending bucket edges starting at 1".into()));
        }
        Ok(())
    }

    /// Index of the bucket holding `k` items.
    fn bucket(&self, k: usize) -> usize {
        self.bucket_edges.partition_point(|&lo| lo <= k) - 1
    }

    fn label(&self, b: usize) -> String {
        let lo = self.bucket_edges[b];
        match self.bucket_edges.get(b + 1) {
            Some(&next) if next == lo + 1 => lo.to_string(),
            Some(&next) => format!("{lo}-{}", next - 1),
            None => format!("{lo}+"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub bucket: String,
    pub mode: ServingMode,
    pub requests: usize,
    pub gflops_per_request: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    /// Point-wise FLOPs over set-wise FLOPs for the bucket (same on both rows).
    pub savings_ratio: f64,
    /// Largest |sharded − unsharded| probability in the bucket (set-wise rows only).
    pub max_divergence: f64,
    /// Sum of [`count_flops_sharded`] / [`count_pointwise_serving_flops`] over the bucket.
    pub analytic_flops: u64,
    /// Sum of the FLOPs the graphs actually executed.
    pub measured_flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "k_bucket,mode,requests,gflops_per_request,p50_ms,p99_ms,savings_ratio,max_divergence,analytic_flops,measured_flops";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:.4},{:.4},{},{},{},{}",
                r.bucket,
                r.mode.name(),
                r.requests,
                r.gflops_per_request,
                r.p50_ms,
                r.p99_ms,
                r.savings_ratio,
                r.max_divergence,
                r.analytic_flops,
                r.measured_flops
            )
            .unwrap();
        }
        s
    }

    pub fn row(&self, bucket: &str, mode: ServingMode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.bucket == bucket && r.mode == mode)
    }
}

/// Nearest-rank percentile of an unsorted sample; 0 when empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q / 100.0 * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[derive(Default)]
struct Acc {
    requests: usize,
    set_flops: u64,
    set_measured: u64,
    pw_flops: u64,
    pw_measured: u64,
    set_ms: Vec<f64>,
    pw_ms: Vec<f64>,
    divergence: f64,
}

/// Serves every request set-wise and point-wise, timing each, and reconciles
/// executed FLOPs with the closed-form counts per item-count bucket.
pub fn bench<F: Real>(model: &Homer, params: &ParamStore<F>, samples: &[RequestSample], cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut acc: Vec<Acc> = (0..cfg.bucket_edges.len()).map(|_| Acc::default()).collect();
    for s in samples {
        let (n, k) = (s.behaviors.len(), s.items.len());
        let a = &mut acc[cfg.bucket(k.max(1))];

        let t = Instant::now();
        let set = predict_request(model, params, s, cfg.shard_size)?;
        a.set_ms.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let pw = predict_pointwise(model, params, s)?;
        a.pw_ms.push(t.elapsed().as_secs_f64() * 1e3);

        a.requests += 1;
        a.set_flops += count_flops_sharded(&model.config, &model.schema, n, k, cfg.shard_size, FlopPolicy::ALL).total();
        a.pw_flops += count_pointwise_serving_flops(&model.config, &model.schema, n, k, FlopPolicy::ALL);
        a.set_measured += set.flops;
        a.pw_measured += pw.flops;
        if cfg.measure_divergence && set.shards > 1 {
            let full = model.forward(params, &JaggedBatch::from_samples([s]))?;
            let diff = |x: &[F], y: &[F]| x.iter().zip(y).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max);
            a.divergence = a.divergence.max(diff(&set.p_exp, &full.p_exp)).max(diff(&set.p_clk, &full.p_clk));
        }
    }

    let mut rows = Vec::new();
    for (b, a) in acc.iter().enumerate().filter(|(_, a)| a.requests > 0) {
        let per = |f: u64| f as f64 / a.requests as f64 / 1e9;
        let savings = a.pw_flops as f64 / a.set_flops as f64;
        let row = |mode, flops, measured, ms: &[f64], divergence| BenchRow {
            bucket: cfg.label(b),
            mode,
            requests: a.requests,
            gflops_per_request: per(flops),
            p50_ms: percentile(ms, 50.0),
            p99_ms: percentile(ms, 99.0),
            savings_ratio: savings,
            max_divergence: divergence,
            analytic_flops: flops,
            measured_flops: measured,
        };
        rows.push(row(ServingMode::SetWise, a.set_flops, a.set_measured, &a.set_ms, a.divergence));
        rows.push(row(ServingMode::PointWise, a.pw_flops, a.pw_measured, &a.pw_ms, 0.0));
    }
    Ok(BenchReport { rows })
}
