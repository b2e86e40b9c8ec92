//! The fixed high-pass filter bank of the texture branch: 30 rich-model
//! residual kernels followed by 32 zero-mean Gabor kernels, applied to the
//! R, G, B and luma channels of an image.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::reflect_index;
use crate::parallel;
use crate::raster::Image;

pub const SRM_COUNT: usize = 30;
pub const GABOR_COUNT: usize = 32;
pub const BANK_SIZE: usize = SRM_COUNT + GABOR_COUNT;
/// All kernels are zero-padded to this support.
pub const PAD_SIZE: usize = 5;
/// Input channels the bank is applied to: R, G, B, Y.
pub const BANK_INPUTS: usize = 4;
pub const BANK_OUTPUTS: usize = BANK_SIZE * BANK_INPUTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Srm,
    Gabor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    pub sigma: f64,
    pub orientation_rad: f64,
    pub phase_rad: f64,
    pub aspect: f64,
    pub wavelength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: Family,
    pub index: usize,
    /// Human-readable class tag, e.g. `srm/2nd/H`.
    pub label: String,
    pub size: usize,
    /// Divisor already applied to `weights`.
    pub normalizer: f64,
    pub params: Option<GaborParams>,
    /// `size×size`, row-major.
    pub weights: Vec<f64>,
}

impl KernelSpec {
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn central_weight(&self) -> f64 {
        let c = self.size / 2;
        self.weight(c, c)
    }

    /// Weights zero-padded to the uniform `5×5` support.
    pub fn padded(&self) -> [f64; PAD_SIZE * PAD_SIZE] {
        let mut out = [0.0; PAD_SIZE * PAD_SIZE];
        let off = (PAD_SIZE - self.size) / 2;
        for r in 0..self.size {
            for c in 0..self.size {
                out[(r + off) * PAD_SIZE + c + off] = self.weight(r, c);
            }
        }
        out
    }
}

// (dy, dx) for E, SE, S, SW, W, NW, N, NE.
const DIRECTIONS: [(isize, isize, &str); 8] = [
    (0, 1, "E"),
    (1, 1, "SE"),
    (1, 0, "S"),
    (1, -1, "SW"),
    (0, -1, "W"),
    (-1, -1, "NW"),
    (-1, 0, "N"),
    (-1, 1, "NE"),
];

fn srm_kernel(index: usize, label: String, size: usize, normalizer: f64, raw: Vec<f64>) -> KernelSpec {
    KernelSpec {
        family: Family::Srm,
        index,
        label,
        size,
        normalizer,
        params: None,
        weights: raw.into_iter().map(|v| v / normalizer).collect(),
    }
}

/// Linear residual along a direction: `taps[i]` lands at `center + (i + first) * d`.
fn directional(size: usize, d: (isize, isize), first: isize, taps: &[f64]) -> Vec<f64> {
    let mut k = vec![0.0; size * size];
    let c = (size / 2) as isize;
    for (i, &t) in taps.iter().enumerate() {
        let s = i as isize + first;
        let (r, col) = (c + s * d.0, c + s * d.1);
        k[(r as usize) * size + col as usize] = t;
    }
    k
}

/// Clockwise quarter turn of a square matrix.
fn rot90(k: &[f64], size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            out[r * size + c] = k[(size - 1 - c) * size + r];
        }
    }
    out
}

const EDGE3: [f64; 9] = [-1., 2., -1., 2., -4., 2., 0., 0., 0.];
const SQUARE3: [f64; 9] = [-1., 2., -1., 2., -4., 2., -1., 2., -1.];
const EDGE5: [f64; 25] = [
    -1., 2., -2., 2., -1., //
    2., -6., 8., -6., 2., //
    -2., 8., -12., 8., -2., //
    0., 0., 0., 0., 0., //
    0., 0., 0., 0., 0.,
];
const SQUARE5: [f64; 25] = [
    -1., 2., -2., 2., -1., //
    2., -6., 8., -6., 2., //
    -2., 8., -12., 8., -2., //
    2., -6., 8., -6., 2., //
    -1., 2., -2., 2., -1.,
];
const ROTATIONS: [&str; 4] = ["top", "right", "bottom", "left"];

/// The 30 basic rich-model residual kernels, each divided by its class
/// normalizer so the central coefficient has magnitude one.
///
/// Order: 8 first-order, 4 second-order, 8 third-order directional
/// residuals, then 4 EDGE3×3, SQUARE3×3, 4 EDGE5×5, SQUARE5×5.
pub fn build_srm_bank() -> Vec<KernelSpec> {
    let mut bank = Vec::with_capacity(SRM_COUNT);
    for &(dy, dx, name) in &DIRECTIONS {
        let k = directional(3, (dy, dx), 0, &[-1.0, 1.0]);
        bank.push(srm_kernel(bank.len(), format!("srm/1st/{name}"), 3, 1.0, k));
    }
    for &(dy, dx, name) in &[(0, 1, "H"), (1, 0, "V"), (1, 1, "D"), (1, -1, "A")] {
        let k = directional(3, (dy, dx), -1, &[1.0, -2.0, 1.0]);
        bank.push(srm_kernel(bank.len(), format!("srm/2nd/{name}"), 3, 2.0, k));
    }
    for &(dy, dx, name) in &DIRECTIONS {
        let k = directional(5, (dy, dx), -1, &[1.0, -3.0, 3.0, -1.0]);
        bank.push(srm_kernel(bank.len(), format!("srm/3rd/{name}"), 5, 3.0, k));
    }
    let mut edge = EDGE3.to_vec();
    for name in ROTATIONS {
        bank.push(srm_kernel(bank.len(), format!("srm/edge3x3/{name}"), 3, 4.0, edge.clone()));
        edge = rot90(&edge, 3);
    }
    bank.push(srm_kernel(bank.len(), "srm/square3x3".into(), 3, 4.0, SQUARE3.to_vec()));
    let mut edge = EDGE5.to_vec();
    for name in ROTATIONS {
        bank.push(srm_kernel(bank.len(), format!("srm/edge5x5/{name}"), 5, 12.0, edge.clone()));
        edge = rot90(&edge, 5);
    }
    bank.push(srm_kernel(bank.len(), "srm/square5x5".into(), 5, 12.0, SQUARE5.to_vec()));
    debug_assert_eq!(bank.len(), SRM_COUNT);
    bank
}

/// Parameter grid for the Gabor half of the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborGrid {
    pub orientations: usize,
    pub phases: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub aspect: f64,
    /// Wavelength as a multiple of sigma.
    pub wavelength_per_sigma: f64,
    pub size: usize,
}

impl Default for GaborGrid {
    fn default() -> Self {
        Self {
            orientations: 8,
            phases: vec![0.0, PI / 2.0],
            sigmas: vec![0.75, 1.5],
            aspect: 0.5,
            wavelength_per_sigma: 4.0,
            size: 5,
        }
    }
}

/// Raw (un-normalized) Gabor response on a `size×size` grid centred at zero.
pub fn gabor_kernel(size: usize, p: &GaborParams) -> Vec<f64> {
    let half = (size / 2) as f64;
    let (s, c) = p.orientation_rad.sin_cos();
    let mut k = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let x = col as f64 - half;
            let y = r as f64 - half;
            let xr = x * c + y * s;
            let yr = -x * s + y * c;
            let envelope = (-(xr * xr + p.aspect * p.aspect * yr * yr) / (2.0 * p.sigma * p.sigma)).exp();
            k.push(envelope * (2.0 * PI * xr / p.wavelength + p.phase_rad).cos());
        }
    }
    k
}

/// 32 zero-mean, L1-normalized Gabor kernels ordered sigma-major, then phase,
/// then orientation.
pub fn build_gabor_bank(grid: &GaborGrid) -> Result<Vec<KernelSpec>> {
    let total = grid.orientations * grid.phases.len() * grid.sigmas.len();
    if total != GABOR_COUNT {
        return Err(Error::Config(format!(
            "Gabor grid {}x{}x{} yields {total} kernels, need {GABOR_COUNT}",
            grid.orientations,
            grid.phases.len(),
            grid.sigmas.len()
        )));
    }
    if grid.size != 3 && grid.size != 5 {
        return Err(Error::Config(format!("Gabor support must be 3 or 5, got {}", grid.size)));
    }
    let mut bank = Vec::with_capacity(GABOR_COUNT);
    for &sigma in &grid.sigmas {
        for &phase in &grid.phases {
            for o in 0..grid.orientations {
                let params = GaborParams {
                    sigma,
                    orientation_rad: o as f64 * PI / grid.orientations as f64,
                    phase_rad: phase,
                    aspect: grid.aspect,
                    wavelength: grid.wavelength_per_sigma * sigma,
                };
                let mut k = gabor_kernel(grid.size, &params);
                let mean = k.iter().sum::<f64>() / k.len() as f64;
                k.iter_mut().for_each(|v| *v -= mean);
                let l1: f64 = k.iter().map(|v| v.abs()).sum();
                if l1 <= f64::EPSILON {
                    return Err(Error::Config(format!("Gabor kernel {params:?} vanishes after mean removal")));
                }
                k.iter_mut().for_each(|v| *v /= l1);
                bank.push(KernelSpec {
                    family: Family::Gabor,
                    index: bank.len(),
                    label: format!("gabor/s{sigma}/p{phase:.4}/o{o}"),
                    size: grid.size,
                    normalizer: l1,
                    params: Some(params),
                    weights: k,
                });
            }
        }
    }
    Ok(bank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub kernels: Vec<KernelSpec>,
    pub pad_size: usize,
}

impl FilterBank {
    pub fn new(grid: &GaborGrid) -> Result<Self> {
        let mut kernels = build_srm_bank();
        kernels.extend(build_gabor_bank(grid)?);
        Ok(Self {
            kernels,
            pad_size: PAD_SIZE,
        })
    }

    pub fn standard() -> Self {
        Self::new(&GaborGrid::default()).expect("default grid is valid")
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// `62×25` row-major matrix of padded kernels.
    pub fn padded_matrix(&self) -> Vec<f64> {
        self.kernels.iter().flat_map(|k| k.padded()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let bank: Self = serde_json::from_str(s)?;
        if bank.kernels.len() != BANK_SIZE {
            return Err(Error::Config(format!("bank has {} kernels, need {BANK_SIZE}", bank.kernels.len())));
        }
        for k in &bank.kernels {
            if k.weights.len() != k.size * k.size || k.size > PAD_SIZE || k.size % 2 == 0 {
                return Err(Error::Config(format!("kernel {} has malformed weights", k.label)));
            }
        }
        Ok(bank)
    }
}

/// Appends BT.601 luma as a fourth channel.
pub fn rgb_to_rgby(image: &Image) -> Result<Image> {
    if image.channels != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", image.channels)));
    }
    let mut data = Vec::with_capacity(image.height * image.width * 4);
    for px in image.data.chunks_exact(3) {
        data.extend_from_slice(px);
        data.push(luma(px[0], px[1], px[2]));
    }
    Image::from_vec(image.height, image.width, 4, data)
}

#[inline]
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Cross-correlates every kernel with every channel of a 4-channel image.
///
/// Borders use reflect padding so output keeps `H×W`. Output channel
/// `ch * 62 + k` holds kernel `k` applied to input channel `ch`.
pub fn apply_bank(bank: &FilterBank, image: &Image) -> Result<Image> {
    if image.channels != BANK_INPUTS {
        return Err(Error::Shape(format!("expected {BANK_INPUTS} channels, got {}", image.channels)));
    }
    if image.height < PAD_SIZE || image.width < PAD_SIZE {
        return Err(Error::InputTooSmall(format!(
            "{}x{} image, filter bank needs at least {PAD_SIZE}x{PAD_SIZE}",
            image.height, image.width
        )));
    }
    let (h, w) = (image.height, image.width);
    let nk = bank.len();
    let kernels: Vec<[f32; PAD_SIZE * PAD_SIZE]> = bank
        .kernels
        .iter()
        .map(|k| k.padded().map(|v| v as f32))
        .collect();
    let r = (PAD_SIZE / 2) as isize;
    let rows: Vec<[usize; PAD_SIZE]> = (0..h as isize)
        .map(|y| std::array::from_fn(|d| reflect_index(y + d as isize - r, h)))
        .collect();
    let cols: Vec<[usize; PAD_SIZE]> = (0..w as isize)
        .map(|x| std::array::from_fn(|d| reflect_index(x + d as isize - r, w)))
        .collect();
    let planes: Vec<Vec<f32>> = parallel::map_indexed(BANK_INPUTS * nk, |oc| {
        let (ch, k) = (oc / nk, oc % nk);
        let kern = &kernels[k];
        let mut out = vec![0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0f32;
                for (dy, &sy) in rows[y].iter().enumerate() {
                    for (dx, &sx) in cols[x].iter().enumerate() {
                        let kv = kern[dy * PAD_SIZE + dx];
                        if kv != 0.0 {
                            acc += kv * image.data[(sy * w + sx) * BANK_INPUTS + ch];
                        }
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    });
    let nout = BANK_INPUTS * nk;
    let mut data = vec![0f32; h * w * nout];
    for (oc, plane) in planes.iter().enumerate() {
        for (i, &v) in plane.iter().enumerate() {
            data[i * nout + oc] = v;
        }
    }
    Image::from_vec(h, w, nout, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_sizes() {
        let bank = FilterBank::standard();
        assert_eq!(bank.len(), BANK_SIZE);
        assert!(bank.kernels[..30].iter().all(|k| k.family == Family::Srm));
        assert!(bank.kernels[30..].iter().all(|k| k.family == Family::Gabor));
        assert!(bank.kernels.iter().all(|k| k.size == 3 || k.size == 5));
        assert!(bank.kernels.iter().all(|k| k.weights.len() == k.size * k.size));
    }

    #[test]
    fn every_kernel_is_zero_dc() {
        for k in &FilterBank::standard().kernels {
            assert!(k.weights.iter().sum::<f64>().abs() < 1e-6, "{}", k.label);
        }
    }

    #[test]
    fn srm_central_coefficient_has_unit_magnitude() {
        for k in build_srm_bank() {
            assert!((k.central_weight().abs() - 1.0).abs() < 1e-12, "{}", k.label);
        }
    }

    #[test]
    fn second_order_horizontal_is_half_minus_one_half() {
        let bank = build_srm_bank();
        let k = bank.iter().find(|k| k.label == "srm/2nd/H").unwrap();
        assert_eq!(k.normalizer, 2.0);
        assert_eq!(&k.weights[3..6], &[0.5, -1.0, 0.5]);
        assert!(k.weights[..3].iter().chain(&k.weights[6..]).all(|&v| v == 0.0));
    }

    #[test]
    fn gabor_grid_must_multiply_to_32() {
        let grid = GaborGrid {
            orientations: 6,
            ..GaborGrid::default()
        };
        assert!(matches!(build_gabor_bank(&grid), Err(Error::Config(_))));
    }

    #[test]
    fn gabor_cosine_phase_is_pi_periodic_in_orientation() {
        for &sigma in &[0.75, 1.5] {
            for o in 0..8 {
                let theta = o as f64 * PI / 8.0;
                let p = GaborParams {
                    sigma,
                    orientation_rad: theta,
                    phase_rad: 0.0,
                    aspect: 0.5,
                    wavelength: 4.0 * sigma,
                };
                let a = gabor_kernel(5, &p);
                let b = gabor_kernel(5, &GaborParams { orientation_rad: theta + PI, ..p });
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gabor_kernels_are_l1_normalized() {
        for k in build_gabor_bank(&GaborGrid::default()).unwrap() {
            let l1: f64 = k.weights.iter().map(|v| v.abs()).sum();
            assert!((l1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn luma_examples() {
        let img = Image::from_vec(1, 3, 3, vec![1., 1., 1., 0., 0., 0., 1., 0., 0.]).unwrap();
        let y = rgb_to_rgby(&img).unwrap();
        assert!((y.get(0, 0, 3) - 1.0).abs() < 1e-6);
        assert_eq!(y.get(0, 1, 3), 0.0);
        assert!((y.get(0, 2, 3) - 0.299).abs() < 1e-7);
        assert_eq!(&y.data[8..11], &[1., 0., 0.]);
    }

    #[test]
    fn rgby_rejects_wrong_channels() {
        assert!(matches!(rgb_to_rgby(&Image::new(2, 2, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn apply_bank_rejects_small_input() {
        let bank = FilterBank::standard();
        assert!(matches!(apply_bank(&bank, &Image::new(4, 9, 4)), Err(Error::InputTooSmall(_))));
        assert!(matches!(apply_bank(&bank, &Image::new(9, 9, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn impulse_response_is_rotated_kernel() {
        let bank = FilterBank::standard();
        let (h, w) = (11, 11);
        let mut img = Image::new(h, w, 4);
        img.set(5, 5, 2, 1.0);
        let out = apply_bank(&bank, &img).unwrap();
        assert_eq!(out.channels, 248);
        for (k, spec) in bank.kernels.iter().enumerate() {
            let pad = spec.padded();
            let oc = 2 * BANK_SIZE + k;
            assert!((out.get(5, 5, oc) as f64 - spec.central_weight()).abs() < 1e-6);
            for dy in 0..5 {
                for dx in 0..5 {
                    let got = out.get(5 + dy - 2, 5 + dx - 2, oc) as f64;
                    let want = pad[(4 - dy) * 5 + (4 - dx)];
                    assert!((got - want).abs() < 1e-6, "kernel {k} at ({dy},{dx})");
                }
            }
            // Other input channels see nothing.
            assert_eq!(out.get(5, 5, k), 0.0);
        }
    }

    #[test]
    fn json_round_trip_preserves_order() {
        let bank = FilterBank::standard();
        let back = FilterBank::from_json(&bank.to_json().unwrap()).unwrap();
        assert_eq!(bank, back);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = FilterBank::standard();
        let b = FilterBank::standard();
        for (x, y) in a.kernels.iter().zip(&b.kernels) {
            assert!(x.weights.iter().zip(&y.weights).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
