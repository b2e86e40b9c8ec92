//! Host preparation, synthetic embedding, WM-SS post-processing, PSNR and
//! dataset manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VertexSet;
use crate::raster::Image;

pub const RESIZED_WIDTH: usize = 1800;
pub const RESIZED_HEIGHT: usize = 900;
pub const TILE_SIDE: usize = 900;
pub const TILE_STRIDE: usize = 450;
pub const TILES_PER_IMAGE: usize = 3;
pub const PSNR_CAP_DB: f64 = 100.0;
pub const DEFAULT_SPLIT: (usize, usize, usize) = (10000, 300, 350);
pub const MANIFEST_KIND: &str = "dbdh-manifest";
pub const MANIFEST_VERSION: u32 = 1;
/// Residual frequencies below this (cycles/pixel, Chebyshev norm) are removed.
pub const BAND_CUTOFF: f64 = 0.25;
const MAX_BISECTION_STEPS: usize = 20;
const PSNR_TOLERANCE_DB: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct HostImage {
    pub path: Option<PathBuf>,
    pub pixels: Image,
    pub source_id: String,
    pub tile_index: usize,
}

/// Resizes to 1800×900 and cuts the three overlapping 900×900 tiles.
pub fn tile_image(image: &Image, source_id: &str) -> Result<Vec<HostImage>> {
    if image.height == 0 || image.width == 0 {
        return Err(Error::InputTooSmall(format!("{source_id}: empty image")));
    }
    let resized = image.resize_bilinear(RESIZED_HEIGHT, RESIZED_WIDTH);
    (0..TILES_PER_IMAGE)
        .map(|t| {
            Ok(HostImage {
                path: None,
                pixels: resized.crop(0, t * TILE_STRIDE, TILE_SIDE, TILE_SIDE)?,
                source_id: source_id.to_string(),
                tile_index: t,
            })
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct TileReport {
    pub tiles: usize,
    pub failures: Vec<(PathBuf, Error)>,
}

/// Tiles every input and hands each tile to `sink`. Decode failures are
/// recorded per file and processing continues; sink errors abort.
pub fn for_each_tile<F>(paths: &[PathBuf], mut sink: F) -> Result<TileReport>
where
    F: FnMut(HostImage) -> Result<()>,
{
    let mut report = TileReport::default();
    for path in paths {
        let image = match Image::load(path) {
            Ok(i) => i,
            Err(e) => {
                report.failures.push((path.clone(), e));
                continue;
            }
        };
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for tile in tile_image(&image, &id)? {
            sink(tile)?;
            report.tiles += 1;
        }
    }
    Ok(report)
}

pub fn tile_hosts(paths: &[PathBuf]) -> Result<(Vec<HostImage>, Vec<(PathBuf, Error)>)> {
    let mut tiles = Vec::new();
    let report = for_each_tile(paths, |t| {
        tiles.push(t);
        Ok(())
    })?;
    Ok((tiles, report.failures))
}

pub fn center_crop(image: &Image, side: usize) -> Result<Image> {
    if side > image.height || side > image.width {
        return Err(Error::Bounds(format!(
            "crop side {side} exceeds {}x{}",
            image.width, image.height
        )));
    }
    image.crop((image.height - side) / 2, (image.width - side) / 2, side, side)
}

/// 10·log10(1/MSE) over all channels, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "psnr of {}x{}x{} and {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let n = a.data.len().max(1) as f64;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RegionRect {
    pub fn centered(h: usize, w: usize, side: usize) -> Result<Self> {
        if side == 0 || side > h || side > w {
            return Err(Error::Config(format!("region side {side} does not fit {w}x{h}")));
        }
        let (x0, y0) = ((w - side) / 2, (h - side) / 2);
        Ok(Self {
            x0,
            y0,
            x1: x0 + side,
            y1: y0 + side,
        })
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn check_within(&self, h: usize, w: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > w || self.y1 > h {
            return Err(Error::Bounds(format!("region {self:?} outside {w}x{h} image")));
        }
        Ok(())
    }

    pub fn vertices(&self, frame: (usize, usize)) -> Result<VertexSet> {
        VertexSet::rect(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64, frame)
    }
}

/// Unit-variance white noise with frequencies below [`BAND_CUTOFF`] removed.
pub fn highpass_residual<R: Rng + ?Sized>(h: usize, w: usize, channels: usize, rng: &mut R) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let (row_f, row_i) = (planner.plan_fft_forward(w), planner.plan_fft_inverse(w));
    let (col_f, col_i) = (planner.plan_fft_forward(h), planner.plan_fft_inverse(h));
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        (k / n as f64).abs()
    };
    let mut out = vec![0.0; h * w * channels];
    let mut buf = vec![Complex::new(0.0, 0.0); h * w];
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for c in 0..channels {
        for v in buf.iter_mut() {
            *v = Complex::new(StandardNormal.sample(rng), 0.0);
        }
        for row in buf.chunks_exact_mut(w) {
            row_f.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_f.process(&mut col);
            for y in 0..h {
                if freq(y, h).max(freq(x, w)) < BAND_CUTOFF {
                    col[y] = Complex::new(0.0, 0.0);
                }
            }
            col_i.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        for row in buf.chunks_exact_mut(w) {
            row_i.process(row);
        }
        let vals: Vec<f64> = buf.iter().map(|v| v.re).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
        for (i, v) in vals.iter().enumerate() {
            out[i * channels + c] = (v - mean) / std;
        }
    }
    out
}

fn quantize16(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0) as f32
}

fn add_residual(host: &Image, rect: &RegionRect, residual: &[f64], scale: f64) -> Image {
    let mut out = host.clone();
    let side_w = rect.x1 - rect.x0;
    let ch = host.channels;
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            for c in 0..ch {
                let r = residual[((y - rect.y0) * side_w + (x - rect.x0)) * ch + c];
                out.set(y, x, c, quantize16(host.get(y, x, c) as f64 + scale * r));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub image: Image,
    pub vertices: VertexSet,
    pub region_rect: RegionRect,
    pub psnr_db: f64,
}

/// Adds a scaled high-frequency residual inside `rect` so the full-frame
/// PSNR lands within 0.1 dB of the target.
pub fn synthetic_embed_in<R: Rng + ?Sized>(host: &Image, rect: RegionRect, target_psnr_db: f64, rng: &mut R) -> Result<Embedding> {
    if !(30.0..=50.0).contains(&target_psnr_db) {
        return Err(Error::Config(format!("target PSNR {target_psnr_db} dB outside [30, 50]")));
    }
    rect.check_within(host.height, host.width)?;
    let residual = highpass_residual(rect.y1 - rect.y0, rect.x1 - rect.x0, host.channels, rng);
    let measure = |s: f64| -> Result<(Image, f64)> {
        let img = add_residual(host, &rect, &residual, s);
        let p = psnr(&img, host)?;
        Ok((img, p))
    };
    // Scale where the residual alone, ignoring clamping, gives the target MSE.
    let frac = residual.len() as f64 / host.data.len() as f64;
    let guess = (10f64.powf(-target_psnr_db / 10.0) / frac).sqrt();
    let (mut lo, mut hi) = (0.0, guess);
    let mut steps = 0;
    while measure(hi)?.1 > target_psnr_db {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > MAX_BISECTION_STEPS {
            return Err(Error::Numeric(format!("target PSNR {target_psnr_db} dB unreachable")));
        }
    }
    let mut s = guess;
    for _ in 0..=MAX_BISECTION_STEPS {
        let (image, p) = measure(s)?;
        if (p - target_psnr_db).abs() <= PSNR_TOLERANCE_DB {
            return Ok(Embedding {
                image,
                vertices: rect.vertices((host.height, host.width))?,
                region_rect: rect,
                psnr_db: p,
            });
        }
        if p > target_psnr_db {
            lo = s;
        } else {
            hi = s;
        }
        s = (lo + hi) / 2.0;
    }
    Err(Error::Numeric(format!(
        "PSNR bisection did not reach {target_psnr_db} dB in {MAX_BISECTION_STEPS} steps"
    )))
}

/// Embeds into the centred `region_side²` patch.
pub fn synthetic_embed<R: Rng + ?Sized>(host: &HostImage, region_side: usize, target_psnr_db: f64, rng: &mut R) -> Result<Embedding> {
    let img = &host.pixels;
    let rect = RegionRect::centered(img.height, img.width, region_side)?;
    synthetic_embed_in(img, rect, target_psnr_db, rng)
}

/// Scales the embedding residual by `strength` inside `rect`, then restores
/// the outer `border_px` ring of the rectangle to host pixels.
pub fn wmss_postprocess(host: &Image, embedded: &Image, rect: RegionRect, strength: f64, border_px: usize) -> Result<Image> {
    if !host.same_shape(embedded) {
        return Err(Error::Shape("host and embedded image differ in shape".into()));
    }
    rect.check_within(host.height, host.width)?;
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!("strength {strength} outside [0, 1]")));
    }
    let mut out = host.clone();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let ring = y < rect.y0 + border_px || y >= rect.y1.saturating_sub(border_px) || x < rect.x0 + border_px || x >= rect.x1.saturating_sub(border_px);
            if ring {
                continue;
            }
            for c in 0..host.channels {
                let (h, e) = (host.get(y, x, c) as f64, embedded.get(y, x, c) as f64);
                out.set(y, x, c, ((1.0 - strength) * h + strength * e) as f32);
            }
        }
    }
    Ok(out)
}

/// Smooth random scene: colour gradient plus soft blobs, quantized to 8 bits.
pub fn synthetic_host<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| 0.25 + 0.5 * rng.random::<f64>());
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random::<f64>() * 0.4 - 0.2, rng.random::<f64>() * 0.4 - 0.2]);
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..6)
        .map(|_| {
            let c = [rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64];
            let r = (0.05 + 0.25 * rng.random::<f64>()) * h.min(w) as f64;
            let col = std::array::from_fn(|_| rng.random::<f64>() * 0.5 - 0.25);
            (c, r, col)
        })
        .collect();
    Image::from_fn(h, w, 3, |y, x, c| {
        let (u, v) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
        let mut val = base[c] + grad[c][0] * u + grad[c][1] * v;
        for (ctr, r, col) in &blobs {
            let d2 = (x as f64 - ctr[0]).powi(2) + (y as f64 - ctr[1]).powi(2);
            val += col[c] * (-d2 / (2.0 * r * r)).exp();
        }
        ((val.clamp(0.02, 0.98) * 255.0).round() / 255.0) as f32
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Wmss,
    Wmpimog,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSample {
    pub id: String,
    pub image_path: PathBuf,
    pub host_path: PathBuf,
    pub vertices: VertexSet,
    pub region_rect: RegionRect,
    pub scheme: Scheme,
    pub psnr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    kind: String,
    version: u32,
    seed: u64,
}

/// JSON-lines manifest: one header line, then one sample per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub samples: Vec<EmbeddedSample>,
    /// Directory relative sample paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn split(&self, which: Split) -> Vec<&EmbeddedSample> {
        self.samples.iter().filter(|s| s.split == Some(which)).collect()
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for s in &self.samples {
            if let Some(sp) = s.split {
                *m.entry(sp).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            kind: MANIFEST_KIND.into(),
            version: MANIFEST_VERSION,
            seed: self.seed,
        };
        let mut s = serde_json::to_string(&header)?;
        s.push('\n');
        for sample in &self.samples {
            s.push_str(&serde_json::to_string(sample)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str, root: PathBuf) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Config("empty manifest".into()))?)?;
        if header.kind != MANIFEST_KIND || header.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest header kind={} version={}",
                header.kind, header.version
            )));
        }
        let samples = lines.map(serde_json::from_str).collect::<std::result::Result<Vec<EmbeddedSample>, _>>()?;
        Ok(Self {
            seed: header.seed,
            samples,
            root,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_jsonl(&text, root)
    }
}

/// Seeded shuffle, then the first `sizes.0` go to train, the next `sizes.1`
/// to val and the next `sizes.2` to test. Leftover samples are dropped.
pub fn split_manifest(samples: Vec<EmbeddedSample>, seed: u64, sizes: (usize, usize, usize)) -> Result<DatasetManifest> {
    let needed = sizes.0 + sizes.1 + sizes.2;
    if samples.len() < needed {
        return Err(Error::SplitSize {
            needed,
            available: samples.len(),
        });
    }
    let mut samples = samples;
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    samples.truncate(needed);
    for (i, s) in samples.iter_mut().enumerate() {
        s.split = Some(if i < sizes.0 {
            Split::Train
        } else if i < sizes.0 + sizes.1 {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(DatasetManifest {
        seed,
        samples,
        root: PathBuf::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCorpusConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub region_side: usize,
    pub psnr_db: f64,
    pub seed: u64,
    pub sizes: (usize, usize, usize),
}

/// Writes `count` synthetic host/embedded PNG pairs under `dir` and a split
/// manifest `dir/manifest.jsonl`.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SyntheticCorpusConfig) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let samples = crate::parallel::map_indexed(cfg.count, |i| -> Result<EmbeddedSample> {
        let mut rng = crate::distortion::sample_rng(cfg.seed, 7, i as u64);
        let host = synthetic_host(cfg.height, cfg.width, &mut rng);
        let rect = RegionRect::centered(cfg.height, cfg.width, cfg.region_side)?;
        let emb = synthetic_embed_in(&host, rect, cfg.psnr_db, &mut rng)?;
        let id = format!("synth_{i:05}");
        let host_path = PathBuf::from(format!("{id}_host.png"));
        let image_path = PathBuf::from(format!("{id}.png"));
        host.save_png16(&dir.join(&host_path))?;
        emb.image.save_png16(&dir.join(&image_path))?;
        Ok(EmbeddedSample {
            id,
            image_path,
            host_path,
            vertices: emb.vertices,
            region_rect: emb.region_rect,
            scheme: Scheme::Synth,
            psnr_db: emb.psnr_db,
            split: None,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut manifest = split_manifest(samples, cfg.seed, cfg.sizes)?;
    manifest.root = dir.to_path_buf();
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::sample_rng;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, 3, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Image::filled(8, 8, 3, 0.5 + 1.0 / 255.0);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-4);
        let c = Image::filled(8, 8, 3, 0.6);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &Image::filled(8, 9, 3, 0.5)).is_err());
    }

    #[test]
    fn tiling_offsets_and_overlap() {
        let img = Image::from_fn(60, 100, 3, |y, x, c| ((x + 2 * y + c) % 13) as f32 / 12.0);
        let tiles = tile_image(&img, "a").unwrap();
        assert_eq!(tiles.len(), 3);
        let resized = img.resize_bilinear(900, 1800);
        for (t, tile) in tiles.iter().enumerate() {
            assert_eq!(tile.pixels, resized.crop(0, t * 450, 900, 900).unwrap());
        }
        let right = tiles[1].pixels.crop(0, 450, 900, 450).unwrap();
        let left = tiles[2].pixels.crop(0, 0, 900, 450).unwrap();
        assert_eq!(right, left);
    }

    #[test]
    fn embed_centred_region_and_locality() {
        let mut rng = sample_rng(5, 0, 0);
        let host = HostImage {
            path: None,
            pixels: synthetic_host(900, 900, &mut rng),
            source_id: "h".into(),
            tile_index: 0,
        };
        let e = synthetic_embed(&host, 400, 40.0, &mut rng).unwrap();
        assert_eq!(e.vertices.points, [[250.0, 250.0], [650.0, 250.0], [650.0, 650.0], [250.0, 650.0]]);
        assert!((e.psnr_db - 40.0).abs() <= 0.2);
        for y in 0..900 {
            for x in 0..900 {
                if !e.region_rect.contains(y, x) {
                    assert_eq!(e.image.pixel(y, x), host.pixels.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn residual_is_high_frequency() {
        let r = highpass_residual(32, 32, 1, &mut sample_rng(1, 0, 0));
        let mean: f64 = r.iter().sum::<f64>() / r.len() as f64;
        assert!(mean.abs() < 1e-9);
        // Neighbouring pixels of a high-passed signal anti-correlate.
        let lag: f64 = (0..32).flat_map(|y| (0..31).map(move |x| (y, x))).map(|(y, x)| r[y * 32 + x] * r[y * 32 + x + 1]).sum();
        assert!(lag < 0.0);
    }

    #[test]
    fn postprocess_extremes() {
        let mut rng = sample_rng(2, 0, 0);
        let host = synthetic_host(64, 64, &mut rng);
        let rect = RegionRect::centered(64, 64, 32).unwrap();
        let emb = synthetic_embed_in(&host, rect, 35.0, &mut rng).unwrap();
        assert_eq!(wmss_postprocess(&host, &emb.image, rect, 0.0, 10).unwrap(), host);
        assert_eq!(wmss_postprocess(&host, &emb.image, rect, 1.0, 0).unwrap(), emb.image);
        let p = wmss_postprocess(&host, &emb.image, rect, 0.6, 10).unwrap();
        assert!(psnr(&p, &host).unwrap() > psnr(&emb.image, &host).unwrap());
        let bad = RegionRect { x0: 60, y0: 0, x1: 70, y1: 10 };
        assert!(matches!(wmss_postprocess(&host, &emb.image, bad, 0.6, 10), Err(Error::Bounds(_))));
    }

    fn dummy(i: usize) -> EmbeddedSample {
        EmbeddedSample {
            id: format!("s{i}"),
            image_path: format!("s{i}.png").into(),
            host_path: format!("h{i}.png").into(),
            vertices: VertexSet::rect(1.0, 1.0, 5.0, 5.0, (8, 8)).unwrap(),
            region_rect: RegionRect { x0: 1, y0: 1, x1: 5, y1: 5 },
            scheme: Scheme::Synth,
            psnr_db: 40.0,
            split: None,
        }
    }

    #[test]
    fn split_examples() {
        let m = split_manifest((0..3).map(dummy).collect(), 1, (1, 1, 1)).unwrap();
        let sizes = m.split_sizes();
        assert_eq!(sizes.values().copied().collect::<Vec<_>>(), vec![1, 1, 1]);
        let again = split_manifest((0..3).map(dummy).collect(), 1, (1, 1, 1)).unwrap();
        assert_eq!(m, again);
        assert!(matches!(
            split_manifest((0..2).map(dummy).collect(), 1, (1, 1, 1)),
            Err(Error::SplitSize { needed: 3, available: 2 })
        ));
    }

    #[test]
    fn manifest_round_trip_is_byte_identical() {
        let m = split_manifest((0..5).map(dummy).collect(), 9, (3, 1, 1)).unwrap();
        let text = m.to_jsonl().unwrap();
        let back = DatasetManifest::from_jsonl(&text, PathBuf::new()).unwrap();
        assert_eq!(back.to_jsonl().unwrap(), text);
        assert!(text.starts_with(r#"{"kind":"dbdh-manifest","version":1,"seed":9}"#));
    }
}
