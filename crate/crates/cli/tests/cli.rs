use std::path::Path;
use std::process::{Command, Output};

use dbdh_core::distortion::{AugFamily, Augmentation};
use dbdh_core::raster::Image;
use serde_json::Value;

fn dbdh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbdh"))
        .args(args)
        .env_remove("DBDH_DATA_DIR")
        .env_remove("DBDH_CACHE_DIR")
        .output()
        .unwrap()
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn diagnostic(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let last = err.lines().last().expect("a diagnostic line");
    serde_json::from_str(last).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = dbdh(&[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"));
    assert_eq!(diagnostic(&out)["error"], "usage");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = dbdh(&["profile", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let d = diagnostic(&out);
    assert_eq!(d["error"], "usage");
    assert!(!d["message"].as_str().unwrap().contains('\n'));
}

#[test]
fn help_exits_0() {
    let out = dbdh(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["train", "eval", "localize", "profile", "prepare-hosts", "embed-synthetic", "postprocess-wmss", "make-manifest"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn profile_default_is_within_band() {
    let v = json_out(&dbdh(&["profile", "--height", "900", "--width", "900", "--seed", "1"]));
    assert_eq!(v["within_band"], true);
    let n = v["mult_adds"].as_f64().unwrap();
    assert!((23.0e9..=38.4e9).contains(&n));
    assert_eq!(v["padded"], serde_json::json!([928, 928]));
    let layers = json_out(&dbdh(&["profile", "--uniform-width", "8", "--layers"]));
    assert!(layers["layers"].as_array().unwrap().len() > 10);
}

#[test]
fn validation_errors_exit_1_with_structured_diagnostic() {
    let out = dbdh(&["profile", "--height", "32"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostic(&out)["error"], "input_too_small");
    let out = dbdh(&["train", "--dataset", "x.jsonl", "--ablation", "id9"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostic(&out)["error"], "config");
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.ckpt");
    let out = dbdh(&["localize", "--ckpt", s(&missing), "--image", s(&tmp.path().join("none.png"))]);
    assert_eq!(out.status.code(), Some(2));
    let d = diagnostic(&out);
    assert!(d["error"] == "image" || d["error"] == "io");
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}

#[test]
fn pipeline_embed_manifest_train_eval_localize() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let v = json_out(&dbdh(&[
        "embed-synthetic", "--out", s(&data), "--count", "6", "--size", "96", "--region-side", "48", "--psnr", "40", "--seed", "3",
    ]));
    assert_eq!(v["count"], 6);
    assert!((v["mean_psnr_db"].as_f64().unwrap() - 40.0).abs() <= 0.2);
    assert!(data.join("config.json").is_file());

    let manifest = data.join("manifest.jsonl");
    let v = json_out(&dbdh(&[
        "make-manifest", "--samples", s(&data.join("samples.jsonl")), "--out", s(&manifest), "--train", "4", "--val", "1", "--test", "1",
    ]));
    assert_eq!((v["train"].as_u64(), v["val"].as_u64(), v["test"].as_u64()), (Some(4), Some(1), Some(1)));
    let too_many = dbdh(&["make-manifest", "--samples", s(&data.join("samples.jsonl")), "--out", s(&tmp.path().join("m2.jsonl"))]);
    assert_eq!(too_many.status.code(), Some(1));
    assert_eq!(diagnostic(&too_many)["error"], "split_size");

    let run = tmp.path().join("run");
    let v = json_out(&dbdh(&[
        "train", "--dataset", s(&manifest), "--out", s(&run), "--uniform-width", "8", "--epochs", "2", "--batch-size", "2", "--seed", "1",
    ]));
    assert_eq!(v["steps"], 4);
    for f in ["config.json", "metrics.csv", "report.json", "checkpoints/best.ckpt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("checkpoints/best.ckpt");

    let out = dbdh(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&manifest), "--pretty"]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Combined") && table.contains("samples: 1"), "{table}");
    let eval_dir = tmp.path().join("eval");
    let v = json_out(&dbdh(&[
        "eval", "--ckpt", s(&ckpt), "--dataset", s(&manifest), "--split", "val", "--distortion", "jpeg", "--out", s(&eval_dir),
    ]));
    assert!(v["iou"]["jpeg"].is_number());
    assert!(eval_dir.join("report.json").is_file() && eval_dir.join("config.json").is_file());

    let aug = Augmentation::default_for(AugFamily::Ss);
    let aug_json = tmp.path().join("aug.json");
    std::fs::write(&aug_json, serde_json::to_string(&aug).unwrap()).unwrap();
    let aug_toml = tmp.path().join("aug.toml");
    std::fs::write(&aug_toml, toml::to_string(&aug).unwrap()).unwrap();
    let base = dbdh(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&manifest), "--distortion", "combined", "--seed", "4"]);
    for cfg in [&aug_json, &aug_toml] {
        let out = dbdh(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&manifest), "--distortion", "combined", "--seed", "4", "--aug-config", s(cfg)]);
        assert_eq!(json_out(&out), json_out(&base));
    }
    let mismatch = dbdh(&["eval", "--ckpt", s(&ckpt), "--dataset", s(&manifest), "--aug", "pimog", "--aug-config", s(&aug_json)]);
    assert_eq!(mismatch.status.code(), Some(1));
    assert_eq!(diagnostic(&mismatch)["error"], "config");

    let m: Vec<Value> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let sample = &m[0];
    let image = sample["image_path"].as_str().unwrap();
    let rect = tmp.path().join("rect.png");
    let v = json_out(&dbdh(&["localize", "--ckpt", s(&ckpt), "--image", image]));
    assert_eq!(v["order"], "TL,TR,BR,BL");
    assert_eq!(v["vertices"].as_array().unwrap().len(), 4);
    assert!(v.get("rectified").is_none());

    let v = json_out(&dbdh(&[
        "localize", "--oracle-manifest", s(&manifest), "--oracle-id", sample["id"].as_str().unwrap(), "--image", image,
        "--rectify-out", s(&rect), "--rectify-size", "32x40",
    ]));
    assert!(v["rectified"].is_string());
    assert_eq!(Image::load(&rect).unwrap().height, 32);
    for (got, want) in v["vertices"].as_array().unwrap().iter().zip(sample["vertices"]["points"].as_array().unwrap()) {
        for k in 0..2 {
            assert!((got[k].as_f64().unwrap() - want[k].as_f64().unwrap()).abs() <= 1.0);
        }
    }

    let host = sample["host_path"].as_str().unwrap();
    let post = tmp.path().join("post.png");
    let v = json_out(&dbdh(&["postprocess-wmss", "--host", host, "--embedded", image, "--rect", "24,24,72,72", "--strength", "0.5", "--out", s(&post)]));
    assert!(v["psnr_after_db"].as_f64().unwrap() > v["psnr_before_db"].as_f64().unwrap());
}

#[test]
fn environment_directories_resolve_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dbdh"))
        .args(["embed-synthetic", "--out", "corpus", "--count", "2", "--size", "64", "--region-side", "32"])
        .env("DBDH_DATA_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("corpus/samples.jsonl").is_file());
}

#[test]
fn prepare_hosts_tiles_and_reports_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    Image::filled(200, 400, 3, 0.3).save_png8(&input.join("a.png")).unwrap();
    std::fs::write(input.join("b.png"), b"broken").unwrap();
    let out = tmp.path().join("tiles");
    let v = json_out(&dbdh(&["prepare-hosts", "--input", s(&input), "--out", s(&out), "--seed", "0"]));
    assert_eq!(v["tiles"], 3);
    assert_eq!(v["failures"].as_array().unwrap().len(), 1);
    assert!(out.join("a_t2.png").is_file());
}
