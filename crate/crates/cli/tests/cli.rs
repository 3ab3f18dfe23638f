use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seed = 3
gen.requests = 300
gen.users = 40
model.d_token = 8
model.d_embed = 4
train.lr = 0.001
train.batch_size = 16
bench.max_requests = 10
";

fn homer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homer")).current_dir(dir).args(args).output().unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), config).unwrap();
    dir
}

fn strip_timestamp(text: &str) -> String {
    let (head, rest) = text.split_once('\n').unwrap();
    let head = head.split(' ').filter(|f| !f.starts_with("timestamp=")).collect::<Vec<_>>().join(" ");
    format!("{head}\n{rest}")
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = setup(&format!("{TINY}model.dropout = 0.1\n"));
    let out = homer(dir.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.dropout"));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = setup("gen.requests = 10\n");
    assert_eq!(homer(dir.path(), &["gen", "--config", "run.cfg"]).status.code(), Some(2));
    assert_eq!(homer(dir.path(), &["gen", "--config", "run.cfg", "--seed", "1"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = setup(TINY);
    let out = homer(dir.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.bin"));
}

#[test]
fn gradcheck_on_tiny_config_passes() {
    let dir = setup(TINY);
    let out = homer(dir.path(), &["gradcheck", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let err: f64 = stdout.split("max relative error ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(err <= 1e-4);
}

#[test]
fn failing_gradcheck_exits_4() {
    let dir = setup(&format!("{TINY}gradcheck.tolerance = 1e-30\n"));
    assert_eq!(homer(dir.path(), &["gradcheck", "--config", "run.cfg"]).status.code(), Some(4));
}

#[test]
fn training_twice_is_byte_identical_modulo_timestamp() {
    let dir = setup(TINY);
    let p = dir.path();
    assert!(homer(p, &["gen", "--config", "run.cfg"]).status.success());
    let dataset = fs::read(p.join("dataset.bin")).unwrap();
    fs::write(p.join("run2.cfg"), format!("{TINY}paths.dataset = dataset.bin\n")).unwrap();
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let o = homer(p, &["train", "--config", "run2.cfg", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let read = |f: &str| fs::read_to_string(p.join(out).join(f)).unwrap();
        runs.push((fs::read(p.join(out).join("model.ckpt")).unwrap(), strip_timestamp(&read("metrics.csv")), strip_timestamp(&read("train_log.csv"))));
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].1.starts_with("# config_hash="));
    assert_eq!(fs::read(p.join("dataset.bin")).unwrap(), dataset, "inputs are never modified");
}

#[test]
fn gen_is_idempotent_and_never_overwrites() {
    let dir = setup(TINY);
    let p = dir.path();
    assert!(homer(p, &["gen", "--config", "run.cfg"]).status.success());
    let first = fs::read(p.join("dataset.bin")).unwrap();
    assert!(homer(p, &["gen", "--config", "run.cfg"]).status.success());
    assert_eq!(fs::read(p.join("dataset.bin")).unwrap(), first);
    assert_eq!(homer(p, &["gen", "--config", "run.cfg", "--seed", "4"]).status.code(), Some(3));
    assert_eq!(fs::read(p.join("dataset.bin")).unwrap(), first);
}

#[test]
fn full_pipeline_writes_hashed_artifacts() {
    let dir = setup(&format!("{TINY}ablation.seeds = 0\nablation.variants = full,pointwise\n"));
    let p = dir.path();
    for cmd in ["gen", "train", "eval", "ablate", "bench"] {
        let o = homer(p, &[cmd, "--config", "run.cfg"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let hash = fs::read_to_string(p.join("metrics.csv")).unwrap().lines().next().unwrap().split(' ').nth(1).unwrap().to_string();
    for f in ["train_log.csv", "metrics.csv", "eval.csv", "ablation.csv", "bench.csv"] {
        let head = fs::read_to_string(p.join(f)).unwrap().lines().next().unwrap().to_string();
        assert!(head.contains(&hash), "{f}: {head}");
    }
    let ablation = fs::read_to_string(p.join("ablation.csv")).unwrap();
    assert!(ablation.contains("\npointwise,all,"));
    fs::write(p.join("wide.cfg"), TINY.replace("d_token = 8", "d_token = 16")).unwrap();
    let o = homer(p, &["eval", "--config", "wide.cfg"]);
    assert_eq!(o.status.code(), Some(2), "checkpoint does not fit a wider model");
}
