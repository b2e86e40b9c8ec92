mod common;

use common::synthetic_dataset;
use dbdh_core::datakit::{write_synthetic_corpus, Split, SyntheticCorpusConfig};
use dbdh_core::distortion::{AugFamily, Distortion};
use dbdh_core::model::{Checkpoint, Dbdh, ModelConfig};
use dbdh_core::nn::Module;
use dbdh_core::raster::Image;
use dbdh_core::trainer::*;

fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(AugFamily::Ss, seed);
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.final_eval = false;
    cfg
}

fn params(model: &mut Dbdh<f32>) -> Vec<f32> {
    let mut v = Vec::new();
    model.visit_params(&mut |p| v.extend_from_slice(&p.value));
    v
}

#[test]
fn two_step_runs_are_reproducible() {
    let data = synthetic_dataset(4, 64, 1, Split::Train);
    let mut cfg = quick_config(3);
    cfg.max_steps = Some(2);
    let mut a = train_on(&data, &data, None, &ModelConfig::uniform(8), &cfg, None).unwrap();
    let mut b = train_on(&data, &data, None, &ModelConfig::uniform(8), &cfg, None).unwrap();
    assert_eq!(a.step_losses.len(), 2);
    for (x, y) in a.step_losses.iter().zip(&b.step_losses) {
        assert!((x.total - y.total).abs() <= 1e-6 * x.total.abs().max(1.0));
    }
    assert_eq!(params(&mut a.model), params(&mut b.model));
    cfg.seed = 4;
    let c = train_on(&data, &data, None, &ModelConfig::uniform(8), &cfg, None).unwrap();
    assert_ne!(a.step_losses[0].total, c.step_losses[0].total);
}

#[test]
fn trainable_filters_move_and_fixed_filters_do_not() {
    let data = synthetic_dataset(2, 64, 2, Split::Train);
    let mut cfg = quick_config(5);
    cfg.max_steps = Some(2);
    cfg.validate_every = 0;

    cfg.ablation = AblationMode::Full;
    let full = train_on(&data, &data, None, &ModelConfig::uniform(8), &cfg, None).unwrap();
    let fresh = Dbdh::<f32>::new(AblationMode::Full.apply(&ModelConfig::uniform(8)), 5).unwrap();
    let (a, b) = (fresh.filter_weights().unwrap(), full.model.filter_weights().unwrap());
    assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let last = Checkpoint::from_model(&mut full.model.clone(), serde_json::Value::Null);
    assert_eq!(last.header.filter_bank, fresh.bank);

    cfg.ablation = AblationMode::Id3;
    let mut model = Dbdh::<f32>::new(AblationMode::Id3.apply(&ModelConfig::uniform(8)), 5).unwrap();
    let before = model.filter_weights().unwrap().to_vec();
    let batch = prepare_batch(&data, &[0, 1], &cfg, 1, 0).unwrap();
    let mut adam = dbdh_core::nn::Adam::new(cfg.lr, cfg.weight_decay);
    for _ in 0..2 {
        accumulate_gradients(&mut model, &batch, &cfg.loss, true).unwrap();
        adam.step(&mut model);
    }
    let after = model.filter_weights().unwrap();
    let moved = before.iter().zip(after).filter(|(x, y)| x != y).count();
    assert!(moved > before.len() / 2, "{moved} of {} filter weights changed", before.len());
}

#[test]
fn zero_seg_weight_matches_seg_off() {
    let data = synthetic_dataset(2, 64, 3, Split::Train);
    let cfg = quick_config(6);
    let batch = prepare_batch(&data, &[0, 1], &cfg, 1, 0).unwrap();
    let mut weights = cfg.loss;
    weights.lambda_seg = 0.0;
    let config = ModelConfig::uniform(8);
    let mut on = Dbdh::<f32>::new(config.clone(), 7).unwrap();
    let mut off = on.clone();
    let a = accumulate_gradients(&mut on, &batch, &weights, true).unwrap();
    let b = accumulate_gradients(&mut off, &batch, &weights, false).unwrap();
    assert_eq!(a.det, b.det);
    assert_eq!(a.total, b.total);
    assert!(a.seg > 0.0 && b.seg == 0.0);
    let grads = |m: &mut Dbdh<f32>| {
        let mut g = Vec::new();
        m.features.visit_params(&mut |p| g.extend_from_slice(&p.grad));
        m.context.visit_params(&mut |p| g.extend_from_slice(&p.grad));
        m.det.visit_params(&mut |p| g.extend_from_slice(&p.grad));
        g
    };
    let (ga, gb) = (grads(&mut on), grads(&mut off));
    assert!(ga.iter().any(|&g| g != 0.0));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn id1_uses_segmentation_only_in_first_epoch() {
    let data = synthetic_dataset(2, 64, 4, Split::Train);
    let mut cfg = quick_config(8);
    cfg.epochs = 3;
    cfg.ablation = AblationMode::Id1;
    cfg.validate_every = 0;
    let out = train_on(&data, &data, None, &ModelConfig::uniform(8), &cfg, None).unwrap();
    let active: Vec<bool> = out.history.iter().skip(1).map(|m| m.seg_active).collect();
    assert_eq!(active, [true, false, false]);
    assert!(out.history[1].train_seg > 0.0);
    assert_eq!(out.history[2].train_seg, 0.0);
    assert!(out.history[0].val_iou.is_some() && out.history[1].val_iou.is_none() && out.history[3].val_iou.is_some());
}

#[test]
fn run_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = SyntheticCorpusConfig {
        count: 6,
        height: 64,
        width: 64,
        region_side: 32,
        psnr_db: 40.0,
        seed: 2,
        sizes: (4, 1, 1),
    };
    let manifest = write_synthetic_corpus(&tmp.path().join("data"), &corpus).unwrap();
    let run = RunDir {
        path: tmp.path().join("run"),
        command_line: vec!["dbdh".into(), "train".into()],
        data_hash: Some("abc".into()),
    };
    let mut cfg = quick_config(9);
    cfg.epochs = 2;
    cfg.checkpoint_every = 1;
    cfg.final_eval = true;
    let out = train(&manifest, &ModelConfig::uniform(8), &cfg, Some(&run)).unwrap();

    let p = &run.path;
    for f in ["config.json", "metrics.csv", "report.json", "checkpoints/best.ckpt", "checkpoints/epoch_001.ckpt", "checkpoints/epoch_002.ckpt"] {
        assert!(p.join(f).is_file(), "missing {f}");
    }
    let csv = std::fs::read_to_string(p.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], EpochMetrics::CSV_HEADER);
    assert_eq!(lines.len(), 3);
    let meta = RunMetadata::read(p).unwrap();
    assert_eq!(meta.seed, 9);
    assert_eq!(meta.data_hash.as_deref(), Some("abc"));
    assert!(meta.finished_unix.is_some());
    assert_eq!(meta.config["train"]["epochs"], 2);
    assert_eq!(meta.config["model"]["head_channels"], 8);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], 1);
    for key in Distortion::columns(AugFamily::Ss) {
        assert!(report["iou"][key.key()].is_number());
    }
    let best = Checkpoint::load(&p.join("checkpoints/best.ckpt")).unwrap();
    assert_eq!(best.header.meta["epoch"], out.best_epoch);
    assert_eq!(best.values, out.checkpoint.values);
}

#[test]
fn localize_output_shape() {
    let data = synthetic_dataset(1, 96, 5, Split::Test);
    let image = data.image(0).unwrap();
    let truth = data.samples[0].vertices;
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("rect.png");
    let out = localize(&OracleStub::default(), &image, Some(&truth), Some((&path, (20, 30)))).unwrap();
    assert_eq!(out.order, "TL,TR,BR,BL");
    assert_eq!(out.vertices, truth.points);
    let rect = Image::load(&path).unwrap();
    assert_eq!((rect.height, rect.width), (20, 30));
    let json: serde_json::Value = serde_json::to_value(&out).unwrap();
    assert_eq!(json["vertices"].as_array().unwrap().len(), 4);
    let bare = localize(&OracleStub::default(), &image, Some(&truth), None).unwrap();
    assert!(serde_json::to_value(&bare).unwrap().get("rectified").is_none());
}

#[test]
fn oracle_beats_untrained_model() {
    let data = synthetic_dataset(3, 128, 6, Split::Val);
    let aug = dbdh_core::distortion::Augmentation::default_for(AugFamily::Ss);
    let oracle = evaluate(&OracleStub::default(), &data, &aug, Distortion::Combined, 0).unwrap();
    let model = Dbdh::<f32>::new(ModelConfig::uniform(8), 0).unwrap();
    let untrained = evaluate(&model, &data, &aug, Distortion::Combined, 0).unwrap();
    assert!(oracle.mean_iou > 0.95);
    assert!(untrained.mean_iou < oracle.mean_iou);
    assert_eq!(oracle.samples, 3);
}
