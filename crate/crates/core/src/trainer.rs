//! Training loop, evaluation harness, ablation grid and run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datakit::{DatasetManifest, EmbeddedSample, Split};
use crate::distortion::{random_warp, sample_rng, AugFamily, Augmentation, Distortion, JPEG_CODEC};
use crate::error::{Error, Result};
use crate::geometry::{decode_vertices, quad_iou, rectify, IouMethod, Quadrilateral, VertexSet, CORNER_ORDER};
use crate::model::{hex, images_to_tensor, Checkpoint, Dbdh, ModelConfig};
use crate::nn::{ops, Adam, Module, Tensor};
use crate::parallel;
use crate::raster::Image;
use crate::supervision::{
    bce_mask_loss_grad, focal_heatmap_loss_grad, render_heatmaps, render_mask, LossWeights, DEFAULT_SIGMA,
};

const WARP_ATTEMPTS: usize = 16;
const STREAM_SHUFFLE: u64 = 100;
const STREAM_TRAIN: u64 = 200;
const STREAM_EVAL_WARP: u64 = 1000;
const STREAM_EVAL_PIXELS: u64 = 1100;
/// Images are kept in memory when the split is at most this many floats.
const CACHE_LIMIT: usize = 1 << 28;

/// Table 2 rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// ID-4: fixed filter bank, both heads.
    Full,
    /// ID-1: plain features; segmentation head only during the first epoch.
    Id1,
    /// ID-2: plain features, both heads.
    Id2,
    /// ID-3: randomly initialized trainable filter bank, both heads.
    Id3,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::Id1, Self::Id2, Self::Id3, Self::Full];

    pub fn key(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Id1 => "id1",
            Self::Id2 => "id2",
            Self::Id3 => "id3",
        }
    }

    pub fn table_id(self) -> &'static str {
        match self {
            Self::Id1 => "ID-1",
            Self::Id2 => "ID-2",
            Self::Id3 => "ID-3",
            Self::Full => "ID-4",
        }
    }

    /// Architecture switches for this mode on top of `base` widths.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.use_seg_head = true;
        match self {
            Self::Full => {
                c.use_texture_branch = true;
                c.filters_trainable = false;
            }
            Self::Id1 | Self::Id2 => {
                c.use_texture_branch = false;
                c.filters_trainable = false;
            }
            Self::Id3 => {
                c.use_texture_branch = true;
                c.filters_trainable = true;
            }
        }
        c
    }

    /// Whether the segmentation loss is used in 1-based `epoch`.
    pub fn seg_active(self, epoch: usize) -> bool {
        self != Self::Id1 || epoch == 1
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "id4" => Ok(Self::Full),
            "id1" => Ok(Self::Id1),
            "id2" => Ok(Self::Id2),
            "id3" => Ok(Self::Id3),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (expected full, id1, id2 or id3)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub aug: Augmentation,
    pub seed: u64,
    pub ablation: AblationMode,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub loss: LossWeights,
    pub sigma: f64,
    /// When false, training samples are used as stored (no warp, no distortion).
    pub augment: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Validate every this many epochs (0 = only before training and at the end).
    pub validate_every: usize,
    /// Validation subset size; `None` uses the whole split.
    pub val_limit: Option<usize>,
    /// Evaluate the selected model on the test split after training.
    pub final_eval: bool,
}

impl TrainConfig {
    pub fn new(family: AugFamily, seed: u64) -> Self {
        Self {
            epochs: 60,
            batch_size: Self::default_batch(family),
            lr: 1e-3,
            weight_decay: 1e-5,
            aug: Augmentation::default_for(family),
            seed,
            ablation: AblationMode::Full,
            checkpoint_every: 10,
            loss: LossWeights::default(),
            sigma: DEFAULT_SIGMA,
            augment: true,
            max_steps: None,
            validate_every: 1,
            val_limit: None,
            final_eval: true,
        }
    }

    pub fn default_batch(family: AugFamily) -> usize {
        match family {
            AugFamily::Ss => 16,
            AugFamily::Pimog => 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.max_steps == Some(0) || self.val_limit == Some(0) {
            return Err(Error::Config("max_steps and val_limit must be positive when set".into()));
        }
        self.loss.validate()?;
        self.aug.validate()
    }
}

/// Samples of one split, loaded lazily or cached in memory.
pub struct Dataset {
    pub samples: Vec<EmbeddedSample>,
    paths: Vec<PathBuf>,
    cache: Option<Vec<Image>>,
}

impl Dataset {
    pub fn from_manifest(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let samples: Vec<EmbeddedSample> = manifest.split(split).into_iter().cloned().collect();
        Self::from_samples(manifest, samples)
    }

    pub fn from_samples(manifest: &DatasetManifest, samples: Vec<EmbeddedSample>) -> Result<Self> {
        let paths: Vec<PathBuf> = samples.iter().map(|s| manifest.resolve(&s.image_path)).collect();
        let floats: usize = samples.iter().map(|s| s.vertices.frame.0 * s.vertices.frame.1 * 3).sum();
        let cache = if floats <= CACHE_LIMIT {
            let images = parallel::map_indexed(paths.len(), |i| Image::load(&paths[i]));
            Some(images.into_iter().collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self { samples, paths, cache })
    }

    /// In-memory dataset, used by tests and the smoke harness.
    pub fn from_images(samples: Vec<EmbeddedSample>, images: Vec<Image>) -> Result<Self> {
        if samples.len() != images.len() {
            return Err(Error::Shape(format!("{} samples but {} images", samples.len(), images.len())));
        }
        Ok(Self {
            paths: samples.iter().map(|s| s.image_path.clone()).collect(),
            samples,
            cache: Some(images),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Image> {
        match &self.cache {
            Some(c) => Ok(c[i].clone()),
            None => Image::load(&self.paths[i]),
        }
    }

    pub fn truncated(mut self, n: Option<usize>) -> Self {
        if let Some(n) = n {
            self.samples.truncate(n);
            self.paths.truncate(n);
            if let Some(c) = self.cache.as_mut() {
                c.truncate(n);
            }
        }
        self
    }
}

/// One prepared minibatch.
pub struct Batch {
    pub x: Tensor<f32>,
    pub heatmaps: Vec<f64>,
    pub masks: Vec<f64>,
    pub vertices: Vec<VertexSet>,
}

/// Loads, warps and distorts the samples at `indices`.
///
/// Each sample draws from its own stream keyed by `(seed, epoch, position)`,
/// so the batch does not depend on worker scheduling.
pub fn prepare_batch(data: &Dataset, indices: &[usize], cfg: &TrainConfig, epoch: usize, step: usize) -> Result<Batch> {
    let prepared = parallel::map_indexed(indices.len(), |k| -> Result<(Image, VertexSet, Vec<f64>, Vec<f64>)> {
        let i = indices[k];
        let image = data.image(i)?;
        let frame = (image.height, image.width);
        let vertices = data.samples[i].vertices;
        if vertices.frame != frame {
            return Err(Error::Shape(format!(
                "sample {} declares frame {:?} but image is {}x{}",
                data.samples[i].id, vertices.frame, frame.0, frame.1
            )));
        }
        let mask = render_mask(&vertices, frame)?;
        let (image, vertices, mask) = if cfg.augment {
            let mut rng = sample_rng(cfg.seed, STREAM_TRAIN + epoch as u64, (step * cfg.batch_size + k) as u64);
            let (img, v, m) = match cfg.aug.perspective() {
                Some(scale) => {
                    let (i, v, m, _) = random_warp(&image, &vertices, &mask, scale, WARP_ATTEMPTS, &mut rng)?;
                    (i, v, m)
                }
                None => (image, vertices, mask),
            };
            (cfg.aug.apply_pixels(&img, &mut rng)?, v, m)
        } else {
            (image, vertices, mask)
        };
        let heat = render_heatmaps(&vertices, frame, cfg.sigma)?;
        Ok((image, vertices, heat.data, mask.data))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let images: Vec<&Image> = prepared.iter().map(|p| &p.0).collect();
    let x = images_to_tensor(&images)?;
    let mut heatmaps = Vec::with_capacity(prepared.len() * prepared[0].2.len());
    let mut masks = Vec::with_capacity(prepared.len() * prepared[0].3.len());
    let mut vertices = Vec::with_capacity(prepared.len());
    for (_, v, h, m) in &prepared {
        heatmaps.extend_from_slice(h);
        masks.extend_from_slice(m);
        vertices.push(*v);
    }
    Ok(Batch {
        x,
        heatmaps,
        masks,
        vertices,
    })
}

/// Batch-mean loss terms of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub det: f64,
    pub seg: f64,
    pub total: f64,
}

/// Zeroes gradients, runs forward and backward on `batch` and leaves the
/// gradients of the batch-mean loss in the model's parameters.
pub fn accumulate_gradients(
    model: &mut Dbdh<f32>,
    batch: &Batch,
    weights: &LossWeights,
    seg_active: bool,
) -> Result<StepLoss> {
    model.zero_grad();
    let out = model.forward_train(&batch.x, seg_active)?;
    let n = batch.x.n;
    let inv_n = 1.0 / n as f64;
    let det_probs = ops::sigmoid_tensor(&out.det_logits);
    let mut d_det = Tensor::zeros(n, 4, batch.x.h, batch.x.w);
    let det_len = d_det.sample_len();
    let mut det = 0.0;
    for i in 0..n {
        let range = i * det_len..(i + 1) * det_len;
        det += focal_heatmap_loss_grad(
            det_probs.sample(i),
            &batch.heatmaps[range],
            weights.alpha,
            weights.beta,
            weights.lambda_det * inv_n,
            d_det.sample_mut(i),
        );
    }
    det *= inv_n;
    let mut seg = 0.0;
    let d_seg = match out.seg_logits.as_ref() {
        Some(logits) => {
            let probs = ops::sigmoid_tensor(logits);
            let mut g = Tensor::zeros(n, 1, batch.x.h, batch.x.w);
            let len = g.sample_len();
            for i in 0..n {
                seg += bce_mask_loss_grad(
                    probs.sample(i),
                    &batch.masks[i * len..(i + 1) * len],
                    weights.lambda_seg * inv_n,
                    g.sample_mut(i),
                );
            }
            seg *= inv_n;
            Some(g)
        }
        None => None,
    };
    let total = weights.lambda_det * det + weights.lambda_seg * seg;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0, det, seg });
    }
    model.backward(&d_det, d_seg.as_ref());
    Ok(StepLoss { det, seg, total })
}

/// Anything that turns an image into four corner heatmaps.
pub trait Localizer: Sync {
    /// `4×H×W` heatmaps for `image`. `reference` is the ground truth, which
    /// only oracle stubs may look at.
    fn heatmaps(&self, image: &Image, reference: Option<&VertexSet>) -> Result<Vec<f32>>;

    fn localize(&self, image: &Image, reference: Option<&VertexSet>) -> Result<VertexSet> {
        let planes = self.heatmaps(image, reference)?;
        decode_vertices(&planes, image.height, image.width)
    }
}

impl Localizer for Dbdh<f32> {
    fn heatmaps(&self, image: &Image, _reference: Option<&VertexSet>) -> Result<Vec<f32>> {
        let x = images_to_tensor(&[image])?;
        Ok(self.infer(&x)?.data)
    }
}

/// Returns the rendered ground-truth heatmaps.
pub struct OracleStub {
    pub sigma: f64,
}

impl Default for OracleStub {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA }
    }
}

impl Localizer for OracleStub {
    fn heatmaps(&self, image: &Image, reference: Option<&VertexSet>) -> Result<Vec<f32>> {
        let v = reference.ok_or_else(|| Error::Config("oracle localizer needs ground-truth vertices".into()))?;
        let h = render_heatmaps(v, (image.height, image.width), self.sigma)?;
        Ok(h.data.iter().map(|&p| p as f32).collect())
    }
}

/// Returns the same value everywhere.
pub struct ConstantStub(pub f32);

impl Localizer for ConstantStub {
    fn heatmaps(&self, image: &Image, _reference: Option<&VertexSet>) -> Result<Vec<f32>> {
        Ok(vec![self.0; 4 * image.height * image.width])
    }
}

/// Outcome for one distortion column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionResult {
    pub distortion: Distortion,
    /// Mean IoU in `[0,1]`.
    pub mean_iou: f64,
    /// Mean Euclidean corner error in pixels.
    pub mean_vertex_error: f64,
    pub samples: usize,
    /// Predictions scored by the rasterized fallback.
    pub rasterized: usize,
}

/// Per-sample scores under one distortion column.
pub fn evaluate<L: Localizer + ?Sized>(
    localizer: &L,
    data: &Dataset,
    aug: &Augmentation,
    distortion: Distortion,
    seed: u64,
) -> Result<DistortionResult> {
    let restricted = aug.restrict(distortion)?;
    let column = Distortion::columns(aug.family())
        .iter()
        .position(|&d| d == distortion)
        .expect("restrict validated the column") as u64;
    let scale = restricted.perspective().expect("restrict keeps the warp");
    let scored = parallel::map_indexed(data.len(), |i| -> Result<(f64, f64, bool)> {
        let image = data.image(i)?;
        let frame = (image.height, image.width);
        let v = data.samples[i].vertices;
        let mask = render_mask(&v, frame)?;
        let mut warp_rng = sample_rng(seed, STREAM_EVAL_WARP, i as u64);
        let (warped, gt, _, _) = random_warp(&image, &v, &mask, scale, WARP_ATTEMPTS, &mut warp_rng)?;
        let mut pixel_rng = sample_rng(seed, STREAM_EVAL_PIXELS + column, i as u64);
        let distorted = restricted.apply_pixels(&warped, &mut pixel_rng)?;
        let pred = localizer.localize(&distorted, Some(&gt))?;
        let r = quad_iou(&Quadrilateral::from(&pred), &Quadrilateral::from(&gt));
        Ok((r.iou, pred.mean_distance(&gt), r.method == IouMethod::Rasterized))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = scored.len().max(1) as f64;
    Ok(DistortionResult {
        distortion,
        mean_iou: scored.iter().map(|s| s.0).sum::<f64>() / n,
        mean_vertex_error: scored.iter().map(|s| s.1).sum::<f64>() / n,
        samples: scored.len(),
        rasterized: scored.iter().filter(|s| s.2).count(),
    })
}

/// Scores without warp or distortion, on the stored images.
pub fn evaluate_clean<L: Localizer + ?Sized>(localizer: &L, data: &Dataset) -> Result<DistortionResult> {
    let scored = parallel::map_indexed(data.len(), |i| -> Result<(f64, f64, bool)> {
        let image = data.image(i)?;
        let gt = data.samples[i].vertices;
        let pred = localizer.localize(&image, Some(&gt))?;
        let r = quad_iou(&Quadrilateral::from(&pred), &Quadrilateral::from(&gt));
        Ok((r.iou, pred.mean_distance(&gt), r.method == IouMethod::Rasterized))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = scored.len().max(1) as f64;
    Ok(DistortionResult {
        distortion: Distortion::None,
        mean_iou: scored.iter().map(|s| s.0).sum::<f64>() / n,
        mean_vertex_error: scored.iter().map(|s| s.1).sum::<f64>() / n,
        samples: scored.len(),
        rasterized: scored.iter().filter(|s| s.2).count(),
    })
}

/// Table 1 shaped report: mean IoU (%) per distortion column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: AugFamily,
    pub iou: BTreeMap<String, f64>,
    pub vertex_error: BTreeMap<String, f64>,
    pub rasterized: BTreeMap<String, usize>,
    pub sample_count: usize,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_results(family: AugFamily, results: &[DistortionResult], config_hash: String, seed: u64) -> Self {
        let mut r = Self {
            family,
            iou: BTreeMap::new(),
            vertex_error: BTreeMap::new(),
            rasterized: BTreeMap::new(),
            sample_count: results.first().map_or(0, |d| d.samples),
            config_hash,
            seed,
        };
        for d in results {
            let k = d.distortion.key().to_string();
            r.iou.insert(k.clone(), 100.0 * d.mean_iou);
            r.vertex_error.insert(k.clone(), d.mean_vertex_error);
            r.rasterized.insert(k, d.rasterized);
        }
        r
    }

    /// Columns in table order that are present in this report.
    pub fn columns(&self) -> Vec<Distortion> {
        Distortion::columns(self.family)
            .iter()
            .copied()
            .filter(|d| self.iou.contains_key(d.key()))
            .collect()
    }

    pub fn to_table(&self) -> String {
        render_table(&[(String::from("DBDH"), self)])
    }
}

/// Runs every requested column and collects an [`EvalReport`].
pub fn evaluate_report<L: Localizer + ?Sized>(
    localizer: &L,
    data: &Dataset,
    aug: &Augmentation,
    distortions: &[Distortion],
    seed: u64,
    config_hash: String,
) -> Result<EvalReport> {
    let results = distortions
        .iter()
        .map(|&d| evaluate(localizer, data, aug, d, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_results(aug.family(), &results, config_hash, seed))
}

fn column_title(d: Distortion) -> &'static str {
    match d {
        Distortion::None => "None",
        Distortion::Blur => "Blur",
        Distortion::ColorJitter => "Color jitter",
        Distortion::Noise => "Noise",
        Distortion::Jpeg => "JPEG",
        Distortion::Illum => "Illum",
        Distortion::Moire => "Moire",
        Distortion::Combined => "Combined",
    }
}

/// Fixed-width table of IoU (%) rows.
pub fn render_table(rows: &[(String, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let cols = first.columns();
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Model");
    for &c in &cols {
        let _ = write!(out, " | {:>12}", column_title(c));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_w + cols.len() * 15));
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for &c in &cols {
            match r.iou.get(c.key()) {
                Some(v) => {
                    let _ = write!(out, " | {v:>12.1}");
                }
                None => {
                    let _ = write!(out, " | {:>12}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub train_det: f64,
    pub train_seg: f64,
    pub seg_active: bool,
    pub val_iou: Option<f64>,
    pub val_vertex_error: Option<f64>,
    pub seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,steps,train_loss,train_det,train_seg,seg_active,val_iou,val_vertex_error,seconds";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{:.6},{},{},{},{:.3}",
            self.epoch,
            self.steps,
            self.train_loss,
            self.train_det,
            self.train_seg,
            self.seg_active as u8,
            opt(self.val_iou),
            opt(self.val_vertex_error),
            self.seconds
        )
    }
}

/// The single metadata document of an artifact directory (`config.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub codecs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub source_hash: String,
    pub data_hash: Option<String>,
    pub parallel: bool,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 of the running executable, or the crate version when unreadable.
pub fn source_hash() -> String {
    std::env::current_exe()
        .ok()
        .and_then(|p| fs::read(p).ok())
        .map(|b| hex(&Sha256::digest(&b)))
        .unwrap_or_else(|| format!("dbdh-core {}", env!("CARGO_PKG_VERSION")))
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl RunMetadata {
    pub fn new(command_line: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        let mut codecs = BTreeMap::new();
        codecs.insert("jpeg".into(), JPEG_CODEC.into());
        codecs.insert("png".into(), "image-rs 0.25 png (16-bit RGB)".into());
        Self {
            command_line,
            config,
            seed,
            codecs,
            started_unix: unix_now(),
            finished_unix: None,
            source_hash: source_hash(),
            data_hash: None,
            parallel: parallel::enabled(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("config.json"), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("config.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where and how a training run records its artifacts.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub command_line: Vec<String>,
    pub data_hash: Option<String>,
}

pub struct TrainOutcome {
    /// Best-validation model.
    pub model: Dbdh<f32>,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub step_losses: Vec<StepLoss>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
    pub report: Option<EvalReport>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

/// Trains on the manifest's train split, selecting by validation IoU.
pub fn train(
    manifest: &DatasetManifest,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<TrainOutcome> {
    let train_set = Dataset::from_manifest(manifest, Split::Train)?;
    let val_set = Dataset::from_manifest(manifest, Split::Val)?;
    let test_set = if cfg.final_eval {
        Some(Dataset::from_manifest(manifest, Split::Test)?)
    } else {
        None
    };
    train_on(&train_set, &val_set, test_set.as_ref(), model_config, cfg, run)
}

/// [`train`] on already loaded splits.
pub fn train_on(
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: Option<&Dataset>,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Config("val split is empty".into()));
    }
    let config = cfg.ablation.apply(model_config);
    let mut model = Dbdh::<f32>::new(config.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let val_limit = cfg.val_limit.unwrap_or(val_set.len()).min(val_set.len());
    let val_view = &val_set.samples[..val_limit];

    let mut metadata = None;
    let mut metrics_csv = None;
    if let Some(r) = run {
        let ckpt_dir = r.path.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let resolved = serde_json::to_value(ResolvedConfig { model: &config, train: cfg })?;
        let mut m = RunMetadata::new(r.command_line.clone(), resolved, cfg.seed);
        m.data_hash = r.data_hash.clone();
        m.write(&r.path)?;
        metadata = Some(m);
        metrics_csv = Some(format!("{}\n", EpochMetrics::CSV_HEADER));
    }

    let validate = |model: &Dbdh<f32>| -> Result<DistortionResult> {
        let view = DatasetView { data: val_set, len: val_view.len() };
        evaluate_view(model, &view, &cfg.aug, Distortion::Combined, cfg.seed)
    };

    let start = Instant::now();
    let v0 = validate(&model)?;
    let epoch0 = EpochMetrics {
        epoch: 0,
        steps: 0,
        train_loss: f64::NAN,
        train_det: f64::NAN,
        train_seg: f64::NAN,
        seg_active: false,
        val_iou: Some(v0.mean_iou),
        val_vertex_error: Some(v0.mean_vertex_error),
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut history = vec![epoch0];
    let meta = |epoch: usize, val: f64| serde_json::json!({ "epoch": epoch, "val_iou": val, "seed": cfg.seed });
    let mut best = (0usize, v0.mean_iou, Checkpoint::from_model(&mut model, meta(0, v0.mean_iou)));
    let mut step_losses = Vec::new();
    let mut steps = 0usize;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let seg_active = cfg.ablation.seg_active(epoch) && model.seg.is_some();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let (mut sum, mut sum_det, mut sum_seg, mut count) = (0.0, 0.0, 0.0, 0usize);
        let mut stop = false;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = prepare_batch(train_set, chunk, cfg, epoch, b)?;
            let loss = match accumulate_gradients(&mut model, &batch, &cfg.loss, seg_active) {
                Err(Error::NonFiniteLoss { det, seg, .. }) => {
                    return Err(Error::NonFiniteLoss {
                        step: steps as u64 + 1,
                        det,
                        seg,
                    })
                }
                other => other?,
            };
            adam.step(&mut model);
            steps += 1;
            step_losses.push(loss);
            sum += loss.total;
            sum_det += loss.det;
            sum_seg += loss.seg;
            count += 1;
            if steps >= max_steps {
                stop = true;
                break;
            }
        }
        let last_epoch = stop || epoch == cfg.epochs;
        let run_val = last_epoch || (cfg.validate_every > 0 && epoch % cfg.validate_every == 0);
        let val = if run_val { Some(validate(&model)?) } else { None };
        let c = count.max(1) as f64;
        let m = EpochMetrics {
            epoch,
            steps,
            train_loss: sum / c,
            train_det: sum_det / c,
            train_seg: sum_seg / c,
            seg_active,
            val_iou: val.as_ref().map(|v| v.mean_iou),
            val_vertex_error: val.as_ref().map(|v| v.mean_vertex_error),
            seconds: t0.elapsed().as_secs_f64(),
        };
        if let Some(v) = &val {
            if v.mean_iou > best.1 || best.0 == 0 {
                best = (epoch, v.mean_iou, Checkpoint::from_model(&mut model, meta(epoch, v.mean_iou)));
            }
        }
        if let (Some(r), Some(csv)) = (run, metrics_csv.as_mut()) {
            csv.push_str(&m.csv_row());
            csv.push('\n');
            let path = r.path.join("metrics.csv");
            fs::write(&path, csv.as_bytes()).map_err(|e| Error::io(&path, e))?;
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let ck = Checkpoint::from_model(&mut model, meta(epoch, m.val_iou.unwrap_or(f64::NAN)));
                ck.save(&r.path.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt")))?;
            }
            if val.is_some() && best.0 == epoch {
                best.2.save(&r.path.join("checkpoints").join("best.ckpt"))?;
            }
        }
        history.push(m);
        if stop {
            break 'epochs;
        }
    }

    let (best_epoch, best_val_iou, checkpoint) = best;
    let model = checkpoint.into_model::<f32>(Some(&config))?;
    let report = match test_set {
        Some(t) if !t.is_empty() => Some(evaluate_report(
            &model,
            t,
            &cfg.aug,
            Distortion::columns(cfg.aug.family()),
            cfg.seed,
            config.hash(),
        )?),
        _ => None,
    };
    if let Some(r) = run {
        checkpoint.save(&r.path.join("checkpoints").join("best.ckpt"))?;
        if let Some(rep) = &report {
            write_json(&r.path.join("report.json"), rep)?;
        }
        if let Some(mut m) = metadata {
            m.finished_unix = Some(unix_now());
            m.write(&r.path)?;
        }
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
        step_losses,
        best_epoch,
        best_val_iou,
        report,
    })
}

struct DatasetView<'a> {
    data: &'a Dataset,
    len: usize,
}

fn evaluate_view(
    model: &Dbdh<f32>,
    view: &DatasetView<'_>,
    aug: &Augmentation,
    distortion: Distortion,
    seed: u64,
) -> Result<DistortionResult> {
    if view.len == view.data.len() {
        return evaluate(model, view.data, aug, distortion, seed);
    }
    let images = (0..view.len).map(|i| view.data.image(i)).collect::<Result<Vec<_>>>()?;
    let subset = Dataset::from_images(view.data.samples[..view.len].to_vec(), images)?;
    evaluate(model, &subset, aug, distortion, seed)
}

/// One row of the ablation table.
pub struct AblationRow {
    pub mode: AblationMode,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains one model per mode with the shared seed and evaluates each on the
/// test split (falling back to val when the test split is empty).
pub fn run_ablation_grid(
    manifest: &DatasetManifest,
    base: &ModelConfig,
    cfg: &TrainConfig,
    modes: &[AblationMode],
    root: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if modes.is_empty() {
        return Err(Error::Config("no ablation modes requested".into()));
    }
    let train_set = Dataset::from_manifest(manifest, Split::Train)?;
    let val_set = Dataset::from_manifest(manifest, Split::Val)?;
    let test_set = Dataset::from_manifest(manifest, Split::Test)?;
    let eval_set = if test_set.is_empty() { &val_set } else { &test_set };
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut c = cfg.clone();
        c.ablation = mode;
        let run = root.map(|r| RunDir {
            path: r.join(mode.key()),
            command_line: std::env::args().collect(),
            data_hash: None,
        });
        let outcome = train_on(&train_set, &val_set, None, base, &c, run.as_ref())?;
        let report = evaluate_report(
            &outcome.model,
            eval_set,
            &c.aug,
            Distortion::columns(c.aug.family()),
            c.seed,
            outcome.model.config.hash(),
        )?;
        if let Some(r) = &run {
            write_json(&r.path.join("report.json"), &report)?;
        }
        rows.push(AblationRow { mode, outcome, report });
    }
    Ok(rows)
}

/// Table 2 shaped rendering of an ablation grid.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let labelled: Vec<(String, &EvalReport)> = rows
        .iter()
        .map(|r| (format!("{} ({})", r.mode.table_id(), r.mode.key()), &r.report))
        .collect();
    render_table(&labelled)
}

/// JSON document printed by the `localize` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeOutput {
    pub vertices: [[f64; 2]; 4],
    pub order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rectified: Option<PathBuf>,
}

/// Predicts the region and optionally writes its rectified crop.
pub fn localize<L: Localizer + ?Sized>(
    localizer: &L,
    image: &Image,
    reference: Option<&VertexSet>,
    rectify_out: Option<(&Path, (usize, usize))>,
) -> Result<LocalizeOutput> {
    let v = localizer.localize(image, reference)?;
    let rectified = match rectify_out {
        Some((path, size)) => {
            let out = rectify(image, &Quadrilateral::from(&v), size)?;
            out.save_png8(path)?;
            Some(path.to_path_buf())
        }
        None => None,
    };
    Ok(LocalizeOutput {
        vertices: v.points,
        order: CORNER_ORDER.to_string(),
        rectified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{synthetic_embed_in, synthetic_host, RegionRect, Scheme};

    fn tiny_data(n: usize, side: usize, seed: u64) -> Dataset {
        let mut samples = Vec::new();
        let mut images = Vec::new();
        for i in 0..n {
            let mut rng = sample_rng(seed, 7, i as u64);
            let host = synthetic_host(side, side, &mut rng);
            let rect = RegionRect::centered(side, side, side / 2).unwrap();
            let e = synthetic_embed_in(&host, rect, 40.0, &mut rng).unwrap();
            samples.push(EmbeddedSample {
                id: format!("s{i}"),
                image_path: PathBuf::from(format!("s{i}.png")),
                host_path: PathBuf::from(format!("s{i}_host.png")),
                vertices: e.vertices,
                region_rect: e.region_rect,
                scheme: Scheme::Synth,
                psnr_db: e.psnr_db,
                split: Some(Split::Train),
            });
            images.push(e.image);
        }
        Dataset::from_images(samples, images).unwrap()
    }

    #[test]
    fn ablation_modes_map_to_architectures() {
        let base = ModelConfig::uniform(8);
        assert!(AblationMode::Full.apply(&base).use_texture_branch);
        assert!(!AblationMode::Full.apply(&base).filters_trainable);
        assert!(!AblationMode::Id1.apply(&base).use_texture_branch);
        assert!(!AblationMode::Id2.apply(&base).use_texture_branch);
        assert!(AblationMode::Id3.apply(&base).filters_trainable);
        assert!(AblationMode::Id1.seg_active(1));
        assert!(!AblationMode::Id1.seg_active(2));
        assert!(AblationMode::Id2.seg_active(5));
        assert_eq!("id4".parse::<AblationMode>().unwrap(), AblationMode::Full);
        assert!("id5".parse::<AblationMode>().is_err());
    }

    #[test]
    fn batch_defaults_follow_family() {
        assert_eq!(TrainConfig::new(AugFamily::Ss, 0).batch_size, 16);
        assert_eq!(TrainConfig::new(AugFamily::Pimog, 0).batch_size, 32);
        let mut c = TrainConfig::new(AugFamily::Ss, 0);
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oracle_and_constant_bounds() {
        let data = tiny_data(4, 384, 3);
        let aug = Augmentation::default_for(AugFamily::Ss);
        let oracle = evaluate(&OracleStub::default(), &data, &aug, Distortion::Combined, 1).unwrap();
        assert!(oracle.mean_iou > 0.99, "{}", oracle.mean_iou);
        let constant = evaluate(&ConstantStub(0.5), &data, &aug, Distortion::None, 1).unwrap();
        assert_eq!(constant.mean_iou, 0.0);
        assert_eq!(constant.rasterized, 4);
        assert!(evaluate(&ConstantStub(0.5), &data, &aug, Distortion::Moire, 1).is_err());
    }

    #[test]
    fn report_keys_follow_family() {
        let data = tiny_data(2, 64, 5);
        let aug = Augmentation::default_for(AugFamily::Pimog);
        let r = evaluate_report(
            &OracleStub::default(),
            &data,
            &aug,
            Distortion::columns(AugFamily::Pimog),
            0,
            "h".into(),
        )
        .unwrap();
        let keys: Vec<_> = r.iou.keys().cloned().collect();
        assert_eq!(keys, ["combined", "illum", "moire", "noise", "none"]);
        assert!(r.iou.values().all(|v| (0.0..=100.0).contains(v)));
        assert!(r.to_table().contains("Moire"));
    }

    #[test]
    fn batch_preparation_is_deterministic() {
        let data = tiny_data(3, 64, 9);
        let mut cfg = TrainConfig::new(AugFamily::Ss, 11);
        cfg.batch_size = 3;
        let a = prepare_batch(&data, &[0, 1, 2], &cfg, 1, 0).unwrap();
        let b = prepare_batch(&data, &[0, 1, 2], &cfg, 1, 0).unwrap();
        assert_eq!(a.x.data, b.x.data);
        assert_eq!(a.heatmaps, b.heatmaps);
        assert_eq!(a.x.shape(), [3, 3, 64, 64]);
        assert_eq!(a.heatmaps.len(), 3 * 4 * 64 * 64);
        let c = prepare_batch(&data, &[0, 1, 2], &cfg, 2, 0).unwrap();
        assert_ne!(a.x.data, c.x.data);
    }
}
