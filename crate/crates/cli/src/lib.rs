//! Command-line driver: data generation, training, evaluation, ablations,
//! gradient checks and the serving benchmark, all driven by one run config.

pub mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use homer_core::data::{encode_dataset, read_dataset, Dataset, JaggedBatch, RequestSample};
use homer_core::model::{Homer, Variant};
use homer_core::numeric::{jitter, read_checkpoint, write_checkpoint, GradCheckConfig, ParamStore};
use homer_core::serving::{bench, BenchConfig};
use homer_core::synth::generate_dataset;
use homer_core::train::{evaluate, run_ablation, split_holdout, step_log_csv, train_one_epoch, EvalReport};
use homer_core::Error;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "homer", version, about = "Set-wise CTR model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run config (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `paths.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides `model.variant`.
    #[arg(long, global = true)]
    pub variant: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Train one epoch; writes the checkpoint, step log and held-out metrics.
    Train,
    /// Evaluate a checkpoint on the held-out split.
    Eval,
    /// Train every configured variant for every configured seed.
    Ablate,
    /// Finite-difference gradient check in f64 on a few small requests.
    Gradcheck,
    /// Set-wise vs point-wise serving cost per item-count bucket.
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Gradcheck => "gradcheck",
            Command::Bench => "bench",
        }
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Dataset(_) | Error::Io(_) | Error::Invalid(_) | Error::IdOutOfRange { .. } | Error::UnknownRequest(_) => {
                EXIT_DATA
            }
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteCheckLoss => EXIT_NUMERIC,
            Error::Shape(_) | Error::EmptyKeys { .. } => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Resolves the run config from the command line.
pub fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, cli.seed)?;
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if let Some(v) = &cli.variant {
        cfg.model.variant = Variant::parse(v).ok_or_else(|| Failure::config(format!("unknown variant `{v}`")))?;
    }
    Ok(cfg)
}

/// Header line written at the top of every text artifact.
pub fn header_line(cfg: &RunConfig, command: Command) -> String {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# config_hash={} command={} timestamp={ts}\n", cfg.hash(), command.name())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn write_text(cfg: &RunConfig, command: Command, name: &str, body: &str) -> CliResult<PathBuf> {
    let path = cfg.paths.out.join(name);
    write_file(&path, format!("{}{body}", header_line(cfg, command)).as_bytes())?;
    Ok(path)
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.paths.dataset();
    let f = fs::File::open(&path).map_err(|e| Failure::data(format!("cannot open dataset {}: {e}", path.display())))?;
    let ds = read_dataset(BufReader::new(f), None).map_err(Error::from)?;
    if ds.samples.is_empty() {
        return Err(Failure::data(format!("dataset {} has no requests", path.display())));
    }
    Ok(ds)
}

fn load_params(model: &Homer, path: &Path) -> CliResult<ParamStore<f32>> {
    let f = fs::File::open(path).map_err(|e| Failure::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let (params, _) = read_checkpoint::<f32, _>(BufReader::new(f))?;
    model
        .layout(&params)
        .map_err(|e| Failure::config(format!("checkpoint {} does not fit the model config: {e}", path.display())))?;
    Ok(params)
}

/// Checks that every input the command reads exists before any work starts.
fn check_inputs(cfg: &RunConfig, command: Command) -> CliResult<()> {
    match command {
        Command::Gen | Command::Gradcheck => Ok(()),
        Command::Train | Command::Ablate => require(&cfg.paths.dataset(), "dataset"),
        Command::Eval => {
            require(&cfg.paths.dataset(), "dataset")?;
            require(&cfg.paths.checkpoint(), "checkpoint")
        }
        Command::Bench => {
            require(&cfg.paths.dataset(), "dataset")?;
            match &cfg.paths.checkpoint {
                Some(p) => require(p, "checkpoint"),
                None => Ok(()),
            }
        }
    }
}

/// Runs one command and returns the lines to print on success.
pub fn run(command: Command, cfg: &RunConfig) -> CliResult<Vec<String>> {
    check_inputs(cfg, command)?;
    fs::create_dir_all(&cfg.paths.out)
        .map_err(|e| Failure::config(format!("cannot create output dir {}: {e}", cfg.paths.out.display())))?;
    match command {
        Command::Gen => gen(cfg),
        Command::Train => train(cfg),
        Command::Eval => eval(cfg),
        Command::Ablate => ablate(cfg),
        Command::Gradcheck => gradcheck(cfg),
        Command::Bench => run_bench(cfg),
    }
}

fn gen(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let mut ds = generate_dataset(&cfg.gen)?;
    ds.tag = format!("config_hash={}\n{}", cfg.hash(), ds.tag);
    let bytes = encode_dataset(&ds).map_err(Error::from)?;
    let path = cfg.paths.dataset();
    if path.exists() {
        let f = fs::File::open(&path).map_err(|e| Failure::data(format!("cannot open {}: {e}", path.display())))?;
        let existing = read_dataset(BufReader::new(f), None).map_err(Error::from)?;
        if existing.schema != ds.schema || existing.samples != ds.samples {
            return Err(Failure::data(format!(
                "{} exists with different contents; refusing to overwrite a dataset",
                path.display()
            )));
        }
        return Ok(vec![format!("dataset {} is up to date ({} requests)", path.display(), ds.samples.len())]);
    }
    write_file(&path, &bytes)?;
    Ok(vec![format!("wrote {} ({} requests)", path.display(), ds.samples.len())])
}

fn train(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let ds = load_dataset(cfg)?;
    let model = Homer::new(cfg.model.clone(), ds.schema.clone())?;
    let out = train_one_epoch(&model, &ds.samples, &cfg.train)?;
    let mut ckpt = Vec::new();
    write_checkpoint(&out.params, &format!("config_hash={}", cfg.hash()), &mut ckpt)?;
    let ckpt_path = cfg.paths.checkpoint();
    write_file(&ckpt_path, &ckpt)?;
    let log = write_text(cfg, Command::Train, "train_log.csv", &step_log_csv(&out.log))?;
    let mut lines = vec![format!("wrote {}", ckpt_path.display()), format!("wrote {}", log.display())];
    if let Some(report) = &out.report {
        let body = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
        lines.push(format!("wrote {}", write_text(cfg, Command::Train, "metrics.csv", &body)?.display()));
        lines.push(format!("holdout {}", summary(report)));
    }
    Ok(lines)
}

fn summary(r: &EvalReport) -> String {
    let auc = r.auc_clk.map_or("undefined".to_string(), |a| format!("{a:.4}"));
    format!("auc_clk={auc} logloss_clk={:.4}", r.logloss_clk)
}

fn eval(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let ds = load_dataset(cfg)?;
    let model = Homer::new(cfg.model.clone(), ds.schema.clone())?;
    let params = load_params(&model, &cfg.paths.checkpoint())?;
    let (_, holdout) = split_holdout(&ds.samples, cfg.train.holdout_fraction);
    let samples = if holdout.is_empty() { &ds.samples[..] } else { holdout };
    let report = evaluate(&model, &params, samples, cfg.train.eval_batch_size)?;
    let body = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    let path = write_text(cfg, Command::Eval, "eval.csv", &body)?;
    Ok(vec![format!("wrote {}", path.display()), summary(&report)])
}

fn ablate(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let ds = load_dataset(cfg)?;
    let table = run_ablation(&ds.samples, &ds.schema, &cfg.model, &cfg.train, &cfg.ablation.seeds, &cfg.ablation.variants)?;
    let path = write_text(cfg, Command::Ablate, "ablation.csv", &table.to_csv())?;
    let mut lines = vec![format!("wrote {}", path.display())];
    for r in table.averaged() {
        lines.push(format!("{:<14} auc_clk={:.4} logloss_clk={:.4}", r.variant.name(), r.auc_clk, r.logloss_clk));
    }
    Ok(lines)
}

/// Small requests for the gradient check: the last `requests` generated
/// requests, with behaviors and items truncated.
fn gradcheck_requests(cfg: &RunConfig) -> CliResult<Vec<RequestSample>> {
    let g = &cfg.gradcheck;
    let mut gen = cfg.gen.clone();
    gen.requests = gen.requests.min(g.requests.saturating_mul(20).max(g.requests));
    let ds = generate_dataset(&gen)?;
    let start = ds.samples.len().saturating_sub(g.requests as usize);
    Ok(ds.samples[start..]
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let n = s.behaviors.len();
            s.behaviors.drain(..n.saturating_sub(g.max_behaviors as usize));
            s.items.truncate(g.max_items as usize);
            s
        })
        .collect())
}

fn gradcheck(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let g = &cfg.gradcheck;
    let samples = gradcheck_requests(cfg)?;
    let model = Homer::new(cfg.model.clone(), homer_core::synth::schema(&cfg.gen))?;
    let mut params = model.init_params::<f64>()?;
    jitter(&mut params, g.jitter, cfg.seed);
    let batch = JaggedBatch::from_samples(&samples);
    let err = model.check_gradients(&params, &batch, GradCheckConfig { step: g.step, coordinates: g.coordinates, seed: cfg.seed })?;
    let pass = err <= g.tolerance;
    let body = format!(
        "max_rel_error,tolerance,coordinates,params,pass\n{err:e},{:e},{},{},{pass}\n",
        g.tolerance,
        g.coordinates,
        params.num_scalars()
    );
    let path = write_text(cfg, Command::Gradcheck, "gradcheck.csv", &body)?;
    let line = format!("max relative error {err:.3e} (tolerance {:.0e}, {} coordinates)", g.tolerance, g.coordinates);
    if pass {
        Ok(vec![format!("wrote {}", path.display()), line])
    } else {
        Err(Failure { code: EXIT_NUMERIC, message: format!("gradient check failed: {line}") })
    }
}

fn run_bench(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let ds = load_dataset(cfg)?;
    let model = Homer::new(cfg.model.clone(), ds.schema.clone())?;
    let params = match &cfg.paths.checkpoint {
        Some(p) => load_params(&model, p)?,
        None => model.init_params::<f32>()?,
    };
    let n = ds.samples.len();
    let take = if cfg.bench.max_requests == 0 { n } else { cfg.bench.max_requests.min(n) };
    let bc = BenchConfig { shard_size: cfg.bench.shard_size, bucket_edges: cfg.bench.bucket_edges.clone(), measure_divergence: true };
    let report = bench(&model, &params, &ds.samples[n - take..], &bc)?;
    let path = write_text(cfg, Command::Bench, "bench.csv", &report.to_csv())?;
    let mut lines = vec![format!("wrote {}", path.display())];
    lines.extend(report.to_csv().lines().map(str::to_string));
    Ok(lines)
}

