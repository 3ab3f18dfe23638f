use homer_core::data::{read_dataset, write_dataset, JaggedBatch};
use homer_core::model::{Homer, ModelConfig, Variant};
use homer_core::numeric::{read_checkpoint, write_checkpoint, ParamStore};
use homer_core::serving::{bench, predict_pointwise, predict_request, BenchConfig, ServingMode};
use homer_core::synth::{generate_dataset, oracle_click_prob, GenConfig};
use homer_core::train::{evaluate, train_one_epoch, TrainConfig};

fn small_gen() -> GenConfig {
    GenConfig { requests: 500, users: 50, ..GenConfig::default() }
}

#[test]
fn generate_store_train_reload_serve() {
    let ds = generate_dataset(&small_gen()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&ds, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_dataset(std::fs::File::open(&path).unwrap(), Some(&ds.schema)).unwrap();
    assert_eq!(back, ds);

    let model = Homer::new(ModelConfig { d_embed: 4, d_token: 8, ..Default::default() }, ds.schema.clone()).unwrap();
    let out = train_one_epoch(&model, &back.samples, &TrainConfig { lr: 1e-3, ..Default::default() }).unwrap();
    let mut ckpt = Vec::new();
    write_checkpoint(&out.params, "pipeline", &mut ckpt).unwrap();
    let (params, tag): (ParamStore<f32>, _) = read_checkpoint(&ckpt[..]).unwrap();
    assert_eq!(tag, "pipeline");
    assert_eq!(params, out.params);

    let holdout = &back.samples[450..];
    let report = evaluate(&model, &params, holdout, 64).unwrap();
    assert_eq!(Some(report), out.report);

    for s in holdout.iter().take(10) {
        let served = predict_request(&model, &params, s, 300).unwrap();
        let fwd = model.forward(&params, &JaggedBatch::from_samples([s])).unwrap();
        assert_eq!(served.p_clk, fwd.p_clk);
        assert!(predict_pointwise(&model, &params, s).unwrap().flops >= served.flops);
    }
}

#[test]
fn oracle_matches_generated_requests_only() {
    let cfg = small_gen();
    let ds = generate_dataset(&cfg).unwrap();
    for s in ds.samples.iter().step_by(50) {
        let p = oracle_click_prob(s, &cfg).unwrap();
        assert_eq!(p.len(), s.items.len());
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
    let other = GenConfig { seed: cfg.seed + 1, ..cfg };
    assert!(ds.samples.iter().take(20).any(|s| oracle_click_prob(s, &other).is_err()));
}

#[test]
fn bench_over_generated_requests() {
    let ds = generate_dataset(&small_gen()).unwrap();
    for variant in [Variant::Full, Variant::Pointwise] {
        let model = Homer::new(ModelConfig { variant, ..Default::default() }, ds.schema.clone()).unwrap();
        let params = model.init_params::<f32>().unwrap();
        let report = bench(&model, &params, &ds.samples[400..], &BenchConfig::default()).unwrap();
        assert!(!report.rows.is_empty());
        for r in &report.rows {
            assert_eq!(r.analytic_flops, r.measured_flops);
            if r.mode == ServingMode::SetWise {
                assert!(r.savings_ratio > 1.0, "{variant} {}: {}", r.bucket, r.savings_ratio);
                assert_eq!(r.max_divergence, 0.0);
            }
        }
    }
}
