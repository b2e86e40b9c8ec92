//! Seeded print-shooting (SS) and screen-shooting (PIMoG) augmentation.
//!
//! Geometry changes only through [`warp_sample`]; the pixel distortions never
//! touch vertices.

use std::f64::consts::PI;
use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{estimate_homography, rect_corners, Homography, Point, VertexSet};
use crate::parallel;
use crate::raster::Image;
use crate::supervision::RegionMask;

/// Codec used for the JPEG stage; recorded in run metadata.
pub const JPEG_CODEC: &str = "image-rs 0.25 (JpegEncoder encode, zune-jpeg decode)";
pub const MAX_PERSPECTIVE_SCALE: f64 = 0.3;
const PERSPECTIVE_ATTEMPTS: usize = 8;

/// Generator for sample `index` of stream `stream`, independent of visiting order.
pub fn sample_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ 0x5851_f42d_4c95_7f2d;
    let mut mix = |v: u64| {
        state = state.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    let words = [mix(stream), mix(index), mix(0), mix(1)];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::Config(format!("{name} range {r:?} must be ordered within [{lo}, {hi}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographySample {
    pub matrix: Homography,
    pub corner_offsets: [[f64; 2]; 4],
    pub scale: f64,
}

impl HomographySample {
    pub fn identity() -> Self {
        Self {
            matrix: Homography::identity(),
            corner_offsets: [[0.0; 2]; 4],
            scale: 0.0,
        }
    }
}

/// Displaces each image corner by `U[-scale/2, scale/2]·min(H,W)` per axis.
pub fn sample_perspective<R: Rng + ?Sized>(frame: (usize, usize), scale: f64, rng: &mut R) -> Result<HomographySample> {
    if !(0.0..=MAX_PERSPECTIVE_SCALE).contains(&scale) {
        return Err(Error::Config(format!("perspective scale {scale} outside [0, {MAX_PERSPECTIVE_SCALE}]")));
    }
    let (h, w) = frame;
    if h < 2 || w < 2 {
        return Err(Error::InputTooSmall(format!("frame {h}x{w}")));
    }
    let src = rect_corners(h, w);
    let span = scale * h.min(w) as f64;
    for _ in 0..PERSPECTIVE_ATTEMPTS {
        let offsets: [[f64; 2]; 4] = std::array::from_fn(|_| {
            let dx = (rng.random::<f64>() - 0.5) * span;
            let dy = (rng.random::<f64>() - 0.5) * span;
            [dx, dy]
        });
        let dst: [Point; 4] = std::array::from_fn(|k| [src[k][0] + offsets[k][0], src[k][1] + offsets[k][1]]);
        if let Ok(m) = estimate_homography(&src, &dst) {
            if m.determinant().abs() > 1e-9 {
                return Ok(HomographySample {
                    matrix: m,
                    corner_offsets: offsets,
                    scale,
                });
            }
        }
    }
    Err(Error::Numeric(format!(
        "no invertible perspective sample after {PERSPECTIVE_ATTEMPTS} attempts"
    )))
}

fn sample_plane(data: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |yy: i64, xx: i64| {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            data[yy as usize * w + xx as usize]
        }
    };
    let mut v = 0.0;
    for (wt, dy, dx) in [
        ((1.0 - fx) * (1.0 - fy), 0, 0),
        (fx * (1.0 - fy), 0, 1),
        ((1.0 - fx) * fy, 1, 0),
        (fx * fy, 1, 1),
    ] {
        if wt != 0.0 {
            v += wt * tap(y0 + dy, x0 + dx);
        }
    }
    v
}

/// Warps image and mask by `hs` (backward mapping, black fill) and maps the
/// vertices exactly. The mask keeps fractional edges.
pub fn warp_sample(
    image: &Image,
    vertices: &VertexSet,
    mask: &RegionMask,
    hs: &HomographySample,
) -> Result<(Image, VertexSet, RegionMask)> {
    let (h, w) = (image.height, image.width);
    if mask.height != h || mask.width != w || vertices.frame != (h, w) {
        return Err(Error::Shape(format!(
            "image {h}x{w}, mask {}x{}, vertex frame {:?}",
            mask.height, mask.width, vertices.frame
        )));
    }
    let points = vertices.points.map(|p| hs.matrix.apply(p));
    let warped = VertexSet::new(points, (h, w)).map_err(|_| Error::SampleRejected)?;
    let inv = hs.matrix.inverse()?;
    let ch = image.channels;
    let mut out = Image::new(h, w, ch);
    parallel::for_each_chunk(&mut out.data, w * ch, |y, row| {
        for x in 0..w {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            for c in 0..ch {
                row[x * ch + c] = image.sample_bilinear(sx, sy, c);
            }
        }
    });
    let mut mdata = vec![0.0; h * w];
    parallel::for_each_chunk(&mut mdata, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            *v = sample_plane(&mask.data, h, w, sx, sy).clamp(0.0, 1.0);
        }
    });
    Ok((
        out,
        warped,
        RegionMask {
            height: h,
            width: w,
            data: mdata,
        },
    ))
}

/// Samples perspective warps until the vertices stay in frame. After
/// `attempts` rejections the identity warp is used.
pub fn random_warp<R: Rng + ?Sized>(
    image: &Image,
    vertices: &VertexSet,
    mask: &RegionMask,
    scale: f64,
    attempts: usize,
    rng: &mut R,
) -> Result<(Image, VertexSet, RegionMask, HomographySample)> {
    for _ in 0..attempts {
        let hs = sample_perspective((image.height, image.width), scale, rng)?;
        match warp_sample(image, vertices, mask, &hs) {
            Ok((i, v, m)) => return Ok((i, v, m, hs)),
            Err(Error::SampleRejected) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok((image.clone(), *vertices, mask.clone(), HomographySample::identity()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsStages {
    pub perspective: bool,
    pub blur: bool,
    pub color_jitter: bool,
    pub noise: bool,
    pub jpeg: bool,
}

impl Default for SsStages {
    fn default() -> Self {
        Self {
            perspective: true,
            blur: true,
            color_jitter: true,
            noise: true,
            jpeg: true,
        }
    }
}

/// Print-shooting augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfigSS {
    pub blur_kernels: Vec<usize>,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
    pub saturation: [f64; 2],
    pub hue: [f64; 2],
    pub noise_sigma: [f64; 2],
    pub jpeg_quality: [u8; 2],
    pub perspective_scale: f64,
    pub enable: SsStages,
}

impl Default for AugConfigSS {
    fn default() -> Self {
        Self {
            blur_kernels: vec![3, 5, 7],
            brightness: [-0.3, 0.3],
            contrast: [0.5, 1.5],
            saturation: [0.0, 1.0],
            hue: [-0.2, 0.2],
            noise_sigma: [0.0, 0.2],
            jpeg_quality: [50, 100],
            perspective_scale: 0.3,
            enable: SsStages::default(),
        }
    }
}

impl AugConfigSS {
    pub fn validate(&self) -> Result<()> {
        if self.blur_kernels.is_empty() || self.blur_kernels.iter().any(|&k| k == 0 || k % 2 == 0 || k > 31) {
            return Err(Error::Config(format!("blur kernels {:?} must be odd sizes in 1..=31", self.blur_kernels)));
        }
        check_range("brightness", self.brightness, -1.0, 1.0)?;
        check_range("contrast", self.contrast, 0.0, 10.0)?;
        check_range("saturation", self.saturation, 0.0, 10.0)?;
        check_range("hue", self.hue, -0.5, 0.5)?;
        check_range("noise_sigma", self.noise_sigma, 0.0, 1.0)?;
        let [q0, q1] = self.jpeg_quality;
        if !(1..=100).contains(&q0) || q0 > q1 || q1 > 100 {
            return Err(Error::Config(format!("jpeg quality range {:?} must be ordered within [1, 100]", self.jpeg_quality)));
        }
        check_range("perspective_scale", [self.perspective_scale; 2], 0.0, MAX_PERSPECTIVE_SCALE)
    }

    pub fn disabled() -> Self {
        Self {
            enable: SsStages {
                perspective: false,
                blur: false,
                color_jitter: false,
                noise: false,
                jpeg: false,
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PimogStages {
    pub perspective: bool,
    pub illumination: bool,
    pub moire: bool,
    pub noise: bool,
}

impl Default for PimogStages {
    fn default() -> Self {
        Self {
            perspective: true,
            illumination: true,
            moire: true,
            noise: true,
        }
    }
}

/// Screen-shooting augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfigPIMoG {
    pub perspective_scale: f64,
    pub illum_range: [f64; 2],
    pub moire_amplitude: [f64; 2],
    pub moire_frequency: [f64; 2],
    /// Maximum angle between the two gratings, degrees.
    pub moire_max_angle_deg: f64,
    pub noise_sigma: [f64; 2],
    pub enable: PimogStages,
}

impl Default for AugConfigPIMoG {
    fn default() -> Self {
        Self {
            perspective_scale: 0.3,
            illum_range: [0.7, 1.3],
            moire_amplitude: [0.0, 0.1],
            moire_frequency: [0.05, 0.25],
            moire_max_angle_deg: 10.0,
            noise_sigma: [0.0, 0.2],
            enable: PimogStages::default(),
        }
    }
}

impl AugConfigPIMoG {
    pub fn validate(&self) -> Result<()> {
        check_range("perspective_scale", [self.perspective_scale; 2], 0.0, MAX_PERSPECTIVE_SCALE)?;
        check_range("illum_range", self.illum_range, 1e-6, 10.0)?;
        check_range("moire_amplitude", self.moire_amplitude, 0.0, 1.0)?;
        check_range("moire_frequency", self.moire_frequency, 0.0, 0.5)?;
        check_range("moire_max_angle_deg", [self.moire_max_angle_deg; 2], 0.0, 90.0)?;
        check_range("noise_sigma", self.noise_sigma, 0.0, 1.0)
    }

    pub fn disabled() -> Self {
        Self {
            enable: PimogStages {
                perspective: false,
                illumination: false,
                moire: false,
                noise: false,
            },
            ..Self::default()
        }
    }
}

/// 2D convolution with reflected borders, same kernel on every channel.
pub fn convolve(image: &Image, kernel: &[f64], k: usize) -> Image {
    assert_eq!(kernel.len(), k * k);
    let (h, w, ch) = (image.height, image.width, image.channels);
    let r = (k / 2) as isize;
    let mut out = Image::new(h, w, ch);
    parallel::for_each_chunk(&mut out.data, w * ch, |y, row| {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for ky in 0..k {
                    let sy = crate::nn::reflect_index(y as isize + ky as isize - r, h);
                    for kx in 0..k {
                        let wt = kernel[ky * k + kx];
                        if wt != 0.0 {
                            let sx = crate::nn::reflect_index(x as isize + kx as isize - r, w);
                            acc += wt * image.get(sy, sx, c) as f64;
                        }
                    }
                }
                row[x * ch + c] = acc as f32;
            }
        }
    });
    out
}

/// Normalized line kernel of length `k` through the centre at angle `theta`.
pub fn motion_kernel(k: usize, theta: f64) -> Vec<f64> {
    let mut kern = vec![0.0; k * k];
    let c = (k / 2) as f64;
    let half = (k as f64 - 1.0) / 2.0;
    let steps = 8 * k;
    for s in 0..=steps {
        let t = -half + 2.0 * half * s as f64 / steps as f64;
        let (x, y) = (c + t * theta.cos(), c + t * theta.sin());
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (wt, dy, dx) in [
            ((1.0 - fx) * (1.0 - fy), 0, 0),
            (fx * (1.0 - fy), 0, 1),
            ((1.0 - fx) * fy, 1, 0),
            (fx * fy, 1, 1),
        ] {
            let (xx, yy) = (x0 as i64 + dx, y0 as i64 + dy);
            if wt > 0.0 && xx >= 0 && yy >= 0 && (xx as usize) < k && (yy as usize) < k {
                kern[yy as usize * k + xx as usize] += wt;
            }
        }
    }
    let s: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|v| *v /= s);
    kern
}

/// Normalized uniform disk of diameter `k`.
pub fn disk_kernel(k: usize) -> Vec<f64> {
    let r = (k as f64 - 1.0) / 2.0;
    let c = (k / 2) as f64;
    let mut kern: Vec<f64> = (0..k * k)
        .map(|i| {
            let (y, x) = ((i / k) as f64 - c, (i % k) as f64 - c);
            if x * x + y * y <= r * r + 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|v| *v /= s);
    kern
}

fn blur<R: Rng + ?Sized>(image: &Image, kernels: &[usize], rng: &mut R) -> Image {
    let k = kernels[rng.random_range(0..kernels.len())];
    let kern = if rng.random_bool(0.5) {
        motion_kernel(k, rng.random::<f64>() * PI)
    } else {
        disk_kernel(k)
    };
    convolve(image, &kern, k)
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn color_jitter<R: Rng + ?Sized>(image: &mut Image, cfg: &AugConfigSS, rng: &mut R) {
    let b = uniform(rng, cfg.brightness) as f32;
    let c = uniform(rng, cfg.contrast) as f32;
    let s = uniform(rng, cfg.saturation) as f32;
    let hue = uniform(rng, cfg.hue);
    image.data.iter_mut().for_each(|v| *v = (*v + b).clamp(0.0, 1.0));
    let ch = image.channels;
    let mean = if ch == 3 {
        image.data.chunks_exact(3).map(|p| luma(p) as f64).sum::<f64>() / (image.height * image.width).max(1) as f64
    } else {
        image.data.iter().map(|&v| v as f64).sum::<f64>() / image.data.len().max(1) as f64
    } as f32;
    image.data.iter_mut().for_each(|v| *v = (mean + c * (*v - mean)).clamp(0.0, 1.0));
    if ch != 3 {
        return;
    }
    let (sin, cos) = ((2.0 * PI * hue).sin() as f32, (2.0 * PI * hue).cos() as f32);
    for p in image.data.chunks_exact_mut(3) {
        let g = luma(p);
        for v in p.iter_mut() {
            *v = (g + s * (*v - g)).clamp(0.0, 1.0);
        }
        let y = luma(p);
        let i = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
        let q = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
        let (i, q) = (cos * i - sin * q, sin * i + cos * q);
        p[0] = (y + 0.956 * i + 0.621 * q).clamp(0.0, 1.0);
        p[1] = (y - 0.272 * i - 0.647 * q).clamp(0.0, 1.0);
        p[2] = (y - 1.106 * i + 1.703 * q).clamp(0.0, 1.0);
    }
}

fn gaussian_noise<R: Rng + ?Sized>(image: &mut Image, sigma_range: [f64; 2], rng: &mut R) {
    let sigma = uniform(rng, sigma_range);
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, sigma as f32).expect("finite sigma");
    for v in image.data.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
}

/// JPEG encode/decode round trip at the given quality.
pub fn jpeg_roundtrip(image: &Image, quality: u8) -> Result<Image> {
    if image.channels != 3 {
        return Err(Error::Shape(format!("JPEG stage needs 3 channels, got {}", image.channels)));
    }
    let mut buf = Vec::new();
    image
        .to_rgb8()
        .write_with_encoder(JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?;
    Ok(Image::from_dynamic(&decoded))
}

/// Blur → colour jitter → noise → JPEG, then clamp. Disabled stages are skipped.
pub fn distort_ss<R: Rng + ?Sized>(image: &Image, cfg: &AugConfigSS, rng: &mut R) -> Result<Image> {
    cfg.validate()?;
    let mut out = if cfg.enable.blur {
        blur(image, &cfg.blur_kernels, rng)
    } else {
        image.clone()
    };
    if cfg.enable.color_jitter {
        color_jitter(&mut out, cfg, rng);
    }
    if cfg.enable.noise {
        gaussian_noise(&mut out, cfg.noise_sigma, rng);
    }
    if cfg.enable.jpeg {
        let q = rng.random_range(cfg.jpeg_quality[0]..=cfg.jpeg_quality[1]);
        out = jpeg_roundtrip(&out, q)?;
    }
    out.clamp01();
    Ok(out)
}

/// Random illumination map with values inside `range`.
pub fn illumination_map<R: Rng + ?Sized>(h: usize, w: usize, range: [f64; 2], rng: &mut R) -> Vec<f64> {
    let a = uniform(rng, range);
    let b = uniform(rng, range);
    if rng.random_bool(0.5) {
        let phi = rng.random::<f64>() * 2.0 * PI;
        let (dx, dy) = (phi.cos(), phi.sin());
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let extent = (cx * dx.abs() + cy * dy.abs()).max(1e-9);
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let t = (((x - cx) * dx + (y - cy) * dy) / extent + 1.0) / 2.0;
                a + (b - a) * t.clamp(0.0, 1.0)
            })
            .collect()
    } else {
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let radius = (0.3 + 0.7 * rng.random::<f64>()) * h.max(w) as f64;
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                b + (a - b) * (-d2 / (2.0 * radius * radius)).exp()
            })
            .collect()
    }
}

/// Two sinusoidal gratings with nearby orientations, each of amplitude `a/2`.
pub fn moire_pattern<R: Rng + ?Sized>(h: usize, w: usize, cfg: &AugConfigPIMoG, rng: &mut R) -> Vec<f64> {
    let amp = uniform(rng, cfg.moire_amplitude);
    let t1 = rng.random::<f64>() * PI;
    let delta = (rng.random::<f64>() * 2.0 - 1.0) * cfg.moire_max_angle_deg.to_radians();
    let t2 = t1 + delta;
    let f1 = uniform(rng, cfg.moire_frequency);
    let f2 = uniform(rng, cfg.moire_frequency);
    let p1 = rng.random::<f64>() * 2.0 * PI;
    let p2 = rng.random::<f64>() * 2.0 * PI;
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let g1 = (2.0 * PI * f1 * (x * t1.cos() + y * t1.sin()) + p1).sin();
            let g2 = (2.0 * PI * f2 * (x * t2.cos() + y * t2.sin()) + p2).sin();
            amp / 2.0 * (g1 + g2)
        })
        .collect()
}

/// Illumination → moiré → noise, then clamp.
pub fn distort_pimog<R: Rng + ?Sized>(image: &Image, cfg: &AugConfigPIMoG, rng: &mut R) -> Result<Image> {
    cfg.validate()?;
    let (h, w, ch) = (image.height, image.width, image.channels);
    let mut out = image.clone();
    if cfg.enable.illumination {
        let map = illumination_map(h, w, cfg.illum_range, rng);
        for (p, &m) in out.data.chunks_exact_mut(ch).zip(&map) {
            p.iter_mut().for_each(|v| *v = (*v as f64 * m) as f32);
        }
    }
    if cfg.enable.moire {
        let pat = moire_pattern(h, w, cfg, rng);
        for (p, &m) in out.data.chunks_exact_mut(ch).zip(&pat) {
            p.iter_mut().for_each(|v| *v = (*v as f64 + m) as f32);
        }
    }
    if cfg.enable.noise {
        gaussian_noise(&mut out, cfg.noise_sigma, rng);
    }
    out.clamp01();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugFamily {
    Ss,
    Pimog,
}

impl std::str::FromStr for AugFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(Self::Ss),
            "pimog" => Ok(Self::Pimog),
            _ => Err(Error::Config(format!("unknown augmentation family `{s}` (expected ss or pimog)"))),
        }
    }
}

/// Evaluation columns; "none" still applies the perspective warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    None,
    Blur,
    ColorJitter,
    Jpeg,
    Illum,
    Moire,
    Noise,
    Combined,
}

impl Distortion {
    pub fn key(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Blur => "blur",
            Self::ColorJitter => "color_jitter",
            Self::Noise => "noise",
            Self::Jpeg => "jpeg",
            Self::Illum => "illum",
            Self::Moire => "moire",
            Self::Combined => "combined",
        }
    }

    pub fn columns(family: AugFamily) -> &'static [Distortion] {
        use Distortion::*;
        match family {
            AugFamily::Ss => &[None, Blur, ColorJitter, Noise, Jpeg, Combined],
            AugFamily::Pimog => &[None, Illum, Moire, Noise, Combined],
        }
    }

    pub fn parse(key: &str, family: AugFamily) -> Result<Self> {
        Self::columns(family)
            .iter()
            .copied()
            .find(|d| d.key() == key)
            .ok_or_else(|| {
                let keys: Vec<_> = Self::columns(family).iter().map(|d| d.key()).collect();
                Error::Config(format!("distortion `{key}` is not valid for {family:?}; expected one of {keys:?}"))
            })
    }
}

/// Either augmentation family with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Augmentation {
    Ss(AugConfigSS),
    Pimog(AugConfigPIMoG),
}

impl Augmentation {
    pub fn default_for(family: AugFamily) -> Self {
        match family {
            AugFamily::Ss => Self::Ss(AugConfigSS::default()),
            AugFamily::Pimog => Self::Pimog(AugConfigPIMoG::default()),
        }
    }

    pub fn family(&self) -> AugFamily {
        match self {
            Self::Ss(_) => AugFamily::Ss,
            Self::Pimog(_) => AugFamily::Pimog,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Ss(c) => c.validate(),
            Self::Pimog(c) => c.validate(),
        }
    }

    /// Perspective scale, or `None` when the warp stage is off.
    pub fn perspective(&self) -> Option<f64> {
        match self {
            Self::Ss(c) => c.enable.perspective.then_some(c.perspective_scale),
            Self::Pimog(c) => c.enable.perspective.then_some(c.perspective_scale),
        }
    }

    pub fn apply_pixels<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Result<Image> {
        match self {
            Self::Ss(c) => distort_ss(image, c, rng),
            Self::Pimog(c) => distort_pimog(image, c, rng),
        }
    }

    /// Keeps the perspective warp and only the pixel stage named by `d`.
    pub fn restrict(&self, d: Distortion) -> Result<Self> {
        Distortion::parse(d.key(), self.family())?;
        let all = d == Distortion::Combined;
        Ok(match self {
            Self::Ss(c) => Self::Ss(AugConfigSS {
                enable: SsStages {
                    perspective: true,
                    blur: all || d == Distortion::Blur,
                    color_jitter: all || d == Distortion::ColorJitter,
                    noise: all || d == Distortion::Noise,
                    jpeg: all || d == Distortion::Jpeg,
                },
                ..c.clone()
            }),
            Self::Pimog(c) => Self::Pimog(AugConfigPIMoG {
                enable: PimogStages {
                    perspective: true,
                    illumination: all || d == Distortion::Illum,
                    moire: all || d == Distortion::Moire,
                    noise: all || d == Distortion::Noise,
                },
                ..c.clone()
            }),
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(s)?;
        a.validate()?;
        Ok(a)
    }
}
