//! Interleaved `H×W×C` float images in `[0,1]` and their PNG storage.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Copies the `h×w` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Bounds(format!(
                "crop {h}x{w} at ({left},{top}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Self::new(h, w, self.channels);
        let row = w * self.channels;
        for y in 0..h {
            let s = self.index(top + y, left, 0);
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[s..s + row]);
        }
        Ok(out)
    }

    /// Bilinear sample at pixel-center coordinates; taps outside the frame read as black.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let tap = |yy: i64, xx: i64| -> f32 {
            if yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                0.0
            } else {
                self.get(yy as usize, xx as usize, c)
            }
        };
        let mut v = 0.0;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w01 = fx * (1.0 - fy);
        let w10 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        // Zero-weight taps are skipped so integer positions reproduce pixels exactly.
        if w00 != 0.0 {
            v += w00 * tap(y0, x0);
        }
        if w01 != 0.0 {
            v += w01 * tap(y0, x0 + 1);
        }
        if w10 != 0.0 {
            v += w10 * tap(y0 + 1, x0);
        }
        if w11 != 0.0 {
            v += w11 * tap(y0 + 1, x0 + 1);
        }
        v
    }

    /// Bilinear resize (half-pixel centers) to `h×w`.
    pub fn resize_bilinear(&self, h: usize, w: usize) -> Self {
        let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
            let scale = src as f64 / dst as f64;
            (0..dst)
                .map(|o| {
                    let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                    let i0 = (s.floor() as usize).min(src - 1);
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, (s - i0 as f64) as f32)
                })
                .collect()
        };
        let ty = taps(self.height, h);
        let tx = taps(self.width, w);
        let ch = self.channels;
        // Horizontal pass on every source row, then vertical.
        let mut tmp = vec![0f32; self.height * w * ch];
        for y in 0..self.height {
            let src = &self.data[y * self.width * ch..(y + 1) * self.width * ch];
            let dst = &mut tmp[y * w * ch..(y + 1) * w * ch];
            for (ox, &(x0, x1, f)) in tx.iter().enumerate() {
                for c in 0..ch {
                    let a = src[x0 * ch + c];
                    let b = src[x1 * ch + c];
                    dst[ox * ch + c] = a + (b - a) * f;
                }
            }
        }
        let mut out = Self::new(h, w, ch);
        let row = w * ch;
        for (oy, &(y0, y1, f)) in ty.iter().enumerate() {
            let (a, b) = (&tmp[y0 * row..(y0 + 1) * row], &tmp[y1 * row..(y1 + 1) * row]);
            let dst = &mut out.data[oy * row..(oy + 1) * row];
            for i in 0..row {
                dst[i] = a[i] + (b[i] - a[i]) * f;
            }
        }
        out
    }

    /// Loads an 8- or 16-bit image as RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        match img {
            image::DynamicImage::ImageRgb16(_) | image::DynamicImage::ImageRgba16(_) | image::DynamicImage::ImageLuma16(_) => {
                let rgb = img.to_rgb16();
                let (w, h) = rgb.dimensions();
                let data = rgb.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 3,
                    data,
                }
            }
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 3,
                    data,
                }
            }
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        assert_eq!(self.channels, 3, "to_rgb8 needs 3 channels");
        let raw = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn to_rgb16(&self) -> ImageBuffer<Rgb<u16>, Vec<u16>> {
        assert_eq!(self.channels, 3, "to_rgb16 needs 3 channels");
        let raw = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Stores as 16-bit PNG so low-amplitude embeddings survive storage.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        self.to_rgb16().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn save_png8(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
