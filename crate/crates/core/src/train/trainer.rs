use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{JaggedBatch, RequestSample};
use crate::error::{Error, Result};
use crate::model::Homer;
use crate::numeric::{adam_step, AdamConfig, AdamState, ParamStore};
use crate::train::EvalReport;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Requests per optimizer step.
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Trailing fraction of the dataset (in generation order) held out for evaluation.
    pub holdout_fraction: f64,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch_size: 32, shuffle_seed: 0, holdout_fraction: 0.1, eval_batch_size: 256 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config("lr must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Splits off the trailing holdout; at least one request stays on each side
/// when there are two or more.
pub fn split_holdout(samples: &[RequestSample], fraction: f64) -> (&[RequestSample], &[RequestSample]) {
    let n = samples.len();
    let mut test = (n as f64 * fraction).floor() as usize;
    if fraction > 0.0 && n >= 2 {
        test = test.clamp(1, n - 1);
    }
    samples.split_at(n - test)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub l_clk: f64,
    pub l_imp: f64,
    pub total: f64,
}

/// Per-step losses as CSV (`step,l_clk,l_imp,total`).
pub fn step_log_csv(log: &[StepLog]) -> String {
    let mut s = String::from("step,l_clk,l_imp,total\n");
    for l in log {
        writeln!(s, "{},{},{},{}", l.step, l.l_clk, l.l_imp, l.total).unwrap();
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub log: Vec<StepLog>,
    /// Held-out metrics; `None` when nothing was held out.
    pub report: Option<EvalReport>,
}

/// Single pass over the training split: shuffle once, one Adam step per batch.
pub fn train_one_epoch(model: &Homer, samples: &[RequestSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let (train, test) = split_holdout(samples, cfg.holdout_fraction);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.shuffle_seed));

    let mut params = model.init_params::<f32>()?;
    let mut adam = AdamState::new(&params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut log = Vec::with_capacity(order.len().div_ceil(cfg.batch_size));
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch = JaggedBatch::from_samples(chunk.iter().map(|&i| &train[i]));
        let (loss, grads) = model.loss_and_grads(&params, &batch)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam_step(&mut params, &grads, &mut adam)?;
        log.push(StepLog { step, l_clk: loss.clk, l_imp: loss.imp, total: loss.total });
    }
    let report = if test.is_empty() { None } else { Some(evaluate(model, &params, test, cfg.eval_batch_size)?) };
    Ok(TrainOutcome { params, log, report })
}

/// Probabilities for every item, in dataset order.
pub fn predict_all(
    model: &Homer,
    params: &ParamStore<f32>,
    samples: &[RequestSample],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut p_exp, mut p_clk) = (Vec::new(), Vec::new());
    for chunk in samples.chunks(batch_size.max(1)) {
        let out = model.forward(params, &JaggedBatch::from_samples(chunk))?;
        p_exp.extend(out.p_exp.iter().map(|&v| v as f64));
        p_clk.extend(out.p_clk.iter().map(|&v| v as f64));
    }
    Ok((p_exp, p_clk))
}

pub fn evaluate(model: &Homer, params: &ParamStore<f32>, samples: &[RequestSample], batch_size: usize) -> Result<EvalReport> {
    let (p_exp, p_clk) = predict_all(model, params, samples, batch_size)?;
    let y_exp: Vec<bool> = samples.iter().flat_map(|s| s.items.iter().map(|i| i.exposed)).collect();
    let y_clk: Vec<bool> = samples.iter().flat_map(|s| s.items.iter().map(|i| i.clicked)).collect();
    Ok(EvalReport::from_predictions(samples.len(), &p_exp, &p_clk, &y_exp, &y_clk))
}
