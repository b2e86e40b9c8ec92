use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::json;

use dbdh_core::datakit::{
    for_each_tile, psnr, split_manifest, synthetic_embed_in, synthetic_host, DatasetManifest, EmbeddedSample, RegionRect,
    Scheme, Split,
};
use dbdh_core::distortion::{sample_rng, AugConfigPIMoG, AugConfigSS, AugFamily, Augmentation, Distortion};
use dbdh_core::model::{count_mult_adds, profile_layers, Checkpoint, Dbdh, ModelConfig, PadPlan, REFERENCE_MULT_ADDS};
use dbdh_core::raster::Image;
use dbdh_core::trainer::{
    self, evaluate_report, file_hash, localize, write_json, AblationMode, Dataset, OracleStub, RunDir, RunMetadata,
    TrainConfig,
};
use dbdh_core::{Error, Result};

use crate::args::*;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
const PROFILE_BAND: f64 = 0.25;

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Train(a) => train(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::Localize(a) => localize_cmd(a),
        Command::Profile(a) => profile(a),
        Command::PrepareHosts(a) => prepare_hosts(a, argv),
        Command::EmbedSynthetic(a) => embed_synthetic(a, argv),
        Command::PostprocessWmss(a) => postprocess(a),
        Command::MakeManifest(a) => make_manifest(a),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn under(base: Option<&PathBuf>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl Common {
    fn data(&self, p: &Path) -> PathBuf {
        under(self.data_dir.as_ref(), p)
    }

    fn cache(&self, p: &Path) -> PathBuf {
        under(self.cache_dir.as_ref(), p)
    }
}

/// Reads JSON, or TOML when the extension is `.toml`.
fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn augmentation(a: &AugArgs) -> Result<Augmentation> {
    let family: AugFamily = a.aug.parse()?;
    let aug = match &a.aug_config {
        None => Augmentation::default_for(family),
        Some(path) => {
            let value: serde_json::Value = read_structured(path)?;
            let parsed = if value.get("family").is_some() {
                serde_json::from_value::<Augmentation>(value)
            } else {
                match family {
                    AugFamily::Ss => serde_json::from_value::<AugConfigSS>(value).map(Augmentation::Ss),
                    AugFamily::Pimog => serde_json::from_value::<AugConfigPIMoG>(value).map(Augmentation::Pimog),
                }
            };
            let aug = parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if aug.family() != family {
                return Err(Error::Config(format!(
                    "{} describes {:?} but --aug is {}",
                    path.display(),
                    aug.family(),
                    a.aug
                )));
            }
            aug
        }
    };
    aug.validate()?;
    Ok(aug)
}

fn model_config(m: &ModelArgs) -> Result<ModelConfig> {
    let c = match (&m.model_config, m.uniform_width) {
        (Some(path), _) => read_structured(path)?,
        (None, Some(w)) => ModelConfig::uniform(w),
        (None, None) => ModelConfig::default(),
    };
    c.validate()?;
    Ok(c)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!("unknown split `{s}` (expected train, val or test)"))),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size `{s}` is not N or HxW"));
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    match nums.as_slice() {
        [n] => Ok((*n, *n)),
        [h, w] => Ok((*h, *w)),
        _ => Err(bad()),
    }
}

fn parse_rect(s: &str) -> Result<RegionRect> {
    let nums = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("rect `{s}` is not x0,y0,x1,y1")))?;
    match nums.as_slice() {
        &[x0, y0, x1, y1] if x0 < x1 && y0 < y1 => Ok(RegionRect { x0, y0, x1, y1 }),
        _ => Err(Error::Config(format!("rect `{s}` must be x0,y0,x1,y1 with x0<x1 and y0<y1"))),
    }
}

fn image_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| Error::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                })
                .collect();
            found.sort();
            files.extend(found);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(Error::Config(format!("input {} does not exist", input.display())));
        }
    }
    Ok(files)
}

fn train(a: TrainArgs, argv: Vec<String>) -> Result<()> {
    let aug = augmentation(&a.aug)?;
    let model = model_config(&a.model)?;
    let ablation: AblationMode = a.ablation.parse()?;
    let mut cfg = TrainConfig::new(aug.family(), a.common.seed);
    cfg.aug = aug;
    cfg.ablation = ablation;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr;
    cfg.weight_decay = a.weight_decay;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.max_steps = a.max_steps;
    cfg.val_limit = a.val_limit;
    cfg.augment = !a.no_augment;
    cfg.final_eval = !a.no_final_eval;
    cfg.validate()?;
    let dataset = a.common.data(&a.dataset);
    let manifest = DatasetManifest::load(&dataset)?;
    let out = match &a.out {
        Some(o) => a.common.cache(o),
        None => a
            .common
            .cache(&PathBuf::from("runs").join(format!("{}-s{}", ablation.key(), a.common.seed))),
    };
    let run = RunDir {
        path: out.clone(),
        command_line: argv,
        data_hash: Some(file_hash(&dataset)?),
    };
    let outcome = trainer::train(&manifest, &model, &cfg, Some(&run))?;
    print_json(&json!({
        "run_dir": out,
        "checkpoint": out.join("checkpoints").join("best.ckpt"),
        "best_epoch": outcome.best_epoch,
        "best_val_iou": outcome.best_val_iou,
        "steps": outcome.step_losses.len(),
        "report": outcome.report,
    }));
    Ok(())
}

fn eval(a: EvalArgs, argv: Vec<String>) -> Result<()> {
    let aug = augmentation(&a.aug)?;
    let distortions: Vec<Distortion> = if a.distortion == "all" {
        Distortion::columns(aug.family()).to_vec()
    } else {
        vec![Distortion::parse(&a.distortion, aug.family())?]
    };
    let split = parse_split(&a.split)?;
    let ckpt = Checkpoint::load(&a.common.data(&a.ckpt))?;
    let model: Dbdh<f32> = ckpt.into_model(None)?;
    let dataset = a.common.data(&a.dataset);
    let manifest = DatasetManifest::load(&dataset)?;
    let data = Dataset::from_manifest(&manifest, split)?;
    if data.is_empty() {
        return Err(Error::Config(format!("split {} of {} is empty", a.split, dataset.display())));
    }
    let report = evaluate_report(
        &model,
        &data,
        &aug,
        &distortions,
        a.common.seed,
        ckpt.header.config_hash.clone(),
    )?;
    if let Some(out) = &a.out {
        let out = a.common.cache(out);
        let config = json!({ "checkpoint": a.ckpt, "aug": aug, "split": a.split, "distortions": distortions });
        let mut meta = RunMetadata::new(argv, config, a.common.seed);
        meta.data_hash = Some(file_hash(&dataset)?);
        meta.finished_unix = Some(trainer::unix_now());
        meta.write(&out)?;
        write_json(&out.join("report.json"), &report)?;
    }
    if a.pretty {
        print!("{}", report.to_table());
        println!("samples: {}  seed: {}  config: {}", report.sample_count, report.seed, report.config_hash);
    } else {
        print_json(&serde_json::to_value(&report)?);
    }
    Ok(())
}

fn localize_cmd(a: LocalizeArgs) -> Result<()> {
    let image = Image::load(&a.common.data(&a.image))?;
    let size = parse_size(&a.rectify_size)?;
    let rect_out = a.rectify_out.as_ref().map(|p| (p.as_path(), size));
    let out = match (&a.oracle_manifest, &a.ckpt) {
        (Some(m), _) => {
            let manifest = DatasetManifest::load(&a.common.data(m))?;
            let id = a.oracle_id.as_deref().unwrap_or_default();
            let sample = manifest
                .samples
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Config(format!("sample `{id}` not in manifest")))?;
            localize(&OracleStub::default(), &image, Some(&sample.vertices), rect_out)?
        }
        (None, Some(c)) => {
            let model: Dbdh<f32> = Checkpoint::load(&a.common.data(c))?.into_model(None)?;
            localize(&model, &image, None, rect_out)?
        }
        (None, None) => return Err(Error::Config("--ckpt is required".into())),
    };
    print_json(&serde_json::to_value(&out)?);
    Ok(())
}

fn profile(a: ProfileArgs) -> Result<()> {
    let config = model_config(&a.model)?;
    let hw = (a.height, a.width);
    let plan = PadPlan::new(a.height, a.width)?;
    let total = count_mult_adds(&config, hw)?;
    let band = [REFERENCE_MULT_ADDS * (1.0 - PROFILE_BAND), REFERENCE_MULT_ADDS * (1.0 + PROFILE_BAND)];
    let mut out = json!({
        "height": a.height,
        "width": a.width,
        "padded": [plan.padded_h, plan.padded_w],
        "mult_adds": total,
        "reference": REFERENCE_MULT_ADDS,
        "band": band,
        "within_band": (band[0]..=band[1]).contains(&(total as f64)),
        "relative": total as f64 / REFERENCE_MULT_ADDS - 1.0,
        "config_hash": config.hash(),
    });
    if a.layers {
        out["layers"] = serde_json::to_value(profile_layers(&config, hw)?)?;
    }
    print_json(&out);
    Ok(())
}

fn prepare_hosts(a: PrepareHostsArgs, argv: Vec<String>) -> Result<()> {
    let inputs: Vec<PathBuf> = a.input.iter().map(|p| a.common.data(p)).collect();
    let files = image_files(&inputs)?;
    if files.is_empty() {
        return Err(Error::Config("no input images found".into()));
    }
    let out = a.common.data(&a.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let report = for_each_tile(&files, |tile| {
        let name = format!("{}_t{}.png", tile.source_id, tile.tile_index);
        tile.pixels.save_png8(&out.join(name))
    })?;
    let failures: Vec<_> = report
        .failures
        .iter()
        .map(|(p, e)| json!({ "path": p, "error": e.to_string() }))
        .collect();
    let config = json!({ "inputs": inputs, "files": files.len() });
    let mut meta = RunMetadata::new(argv, config, a.common.seed);
    meta.finished_unix = Some(trainer::unix_now());
    meta.write(&out)?;
    print_json(&json!({ "out": out, "inputs": files.len(), "tiles": report.tiles, "failures": failures }));
    Ok(())
}

fn embed_synthetic(a: EmbedArgs, argv: Vec<String>) -> Result<()> {
    let out = a.common.data(&a.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let hosts: Vec<(String, PathBuf, Option<Image>)> = match &a.hosts {
        Some(dir) => image_files(&[a.common.data(dir)])?
            .into_iter()
            .map(|p| {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (id, p, None)
            })
            .collect(),
        None => (0..a.count)
            .map(|i| {
                let id = format!("synth_{i:05}");
                let mut rng = sample_rng(a.common.seed, 6, i as u64);
                let img = synthetic_host(a.size, a.size, &mut rng);
                (id.clone(), PathBuf::from(format!("{id}_host.png")), Some(img))
            })
            .collect(),
    };
    if hosts.is_empty() {
        return Err(Error::Config("no host images found".into()));
    }
    let samples = dbdh_core::parallel::map_indexed(hosts.len(), |i| -> Result<EmbeddedSample> {
        let (id, host_path, generated) = &hosts[i];
        let host = match generated {
            Some(img) => {
                img.save_png16(&out.join(host_path))?;
                img.clone()
            }
            None => Image::load(host_path)?,
        };
        let rect = RegionRect::centered(host.height, host.width, a.region_side)?;
        let mut rng = sample_rng(a.common.seed, 7, i as u64);
        let emb = synthetic_embed_in(&host, rect, a.psnr, &mut rng)?;
        let image_path = PathBuf::from(format!("{id}_wm.png"));
        emb.image.save_png16(&out.join(&image_path))?;
        Ok(EmbeddedSample {
            id: id.clone(),
            image_path,
            host_path: host_path.clone(),
            vertices: emb.vertices,
            region_rect: emb.region_rect,
            scheme: Scheme::Synth,
            psnr_db: emb.psnr_db,
            split: None,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let list = DatasetManifest {
        seed: a.common.seed,
        samples,
        root: out.clone(),
    };
    let path = out.join("samples.jsonl");
    list.save(&path)?;
    let config = json!({ "hosts": a.hosts, "region_side": a.region_side, "psnr_db": a.psnr, "count": list.samples.len() });
    let mut meta = RunMetadata::new(argv, config, a.common.seed);
    meta.finished_unix = Some(trainer::unix_now());
    meta.write(&out)?;
    let mean_psnr = list.samples.iter().map(|s| s.psnr_db).sum::<f64>() / list.samples.len() as f64;
    print_json(&json!({ "samples": path, "count": list.samples.len(), "mean_psnr_db": mean_psnr }));
    Ok(())
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    let host = Image::load(&a.common.data(&a.host))?;
    let embedded = Image::load(&a.common.data(&a.embedded))?;
    let rect = match &a.rect {
        Some(r) => parse_rect(r)?,
        None => RegionRect::centered(host.height, host.width, 400)?,
    };
    let out = dbdh_core::datakit::wmss_postprocess(&host, &embedded, rect, a.strength, a.border)?;
    let path = a.common.data(&a.out);
    out.save_png16(&path)?;
    print_json(&json!({
        "out": path,
        "psnr_before_db": psnr(&host, &embedded)?,
        "psnr_after_db": psnr(&host, &out)?,
    }));
    Ok(())
}

fn make_manifest(a: ManifestArgs) -> Result<()> {
    let list = DatasetManifest::load(&a.common.data(&a.samples))?;
    let samples: Vec<EmbeddedSample> = list
        .samples
        .iter()
        .map(|s| EmbeddedSample {
            image_path: list.resolve(&s.image_path),
            host_path: list.resolve(&s.host_path),
            ..s.clone()
        })
        .collect();
    let mut manifest = split_manifest(samples, a.common.seed, (a.train, a.val, a.test))?;
    let out = a.common.data(&a.out);
    manifest.root = out.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest.save(&out)?;
    let sizes = manifest.split_sizes();
    print_json(&json!({
        "manifest": out,
        "train": sizes.get(&Split::Train).copied().unwrap_or(0),
        "val": sizes.get(&Split::Val).copied().unwrap_or(0),
        "test": sizes.get(&Split::Test).copied().unwrap_or(0),
        "seed": a.common.seed,
    }));
    Ok(())
}
