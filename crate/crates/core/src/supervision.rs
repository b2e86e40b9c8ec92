//! Heatmap and mask targets plus the detection, segmentation and combined
//! training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::{Quadrilateral, VertexSet};
use crate::nn::Real;

pub const DEFAULT_SIGMA: f64 = 5.0;
/// Predictions are clamped to `[EPS, 1-EPS]` before taking logarithms.
pub const PROB_EPS: f64 = 1e-6;

/// Four Gaussian peak maps, channels ordered TL,TR,BR,BL.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RegionMask {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_det: f64,
    pub lambda_seg: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_det: 1.0,
            lambda_seg: 10.0,
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        // lambda_seg = 0 is allowed so the segmentation term can be switched off.
        let ok = self.lambda_det > 0.0 && self.lambda_seg >= 0.0 && self.alpha > 0.0 && self.beta > 0.0;
        if !ok || ![self.lambda_det, self.lambda_seg, self.alpha, self.beta].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

fn check_frame(vertices: &VertexSet, frame: (usize, usize)) -> Result<()> {
    if frame.0 == 0 || frame.1 == 0 {
        return Err(Error::Config("empty frame".into()));
    }
    VertexSet {
        points: vertices.points,
        frame,
    }
    .check_in_frame()
}

pub fn render_heatmaps(vertices: &VertexSet, frame: (usize, usize), sigma: f64) -> Result<Heatmap> {
    check_frame(vertices, frame)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let (h, w) = frame;
    let hw = h * w;
    let mut data = vec![0.0; 4 * hw];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (c, plane) in data.chunks_exact_mut(hw).enumerate() {
        let [vx, vy] = vertices.points[c];
        let gx: Vec<f64> = (0..w).map(|j| (j as f64 - vx).powi(2)).collect();
        for i in 0..h {
            let dy = (i as f64 - vy).powi(2);
            for (j, v) in plane[i * w..(i + 1) * w].iter_mut().enumerate() {
                *v = (-(gx[j] + dy) * inv).exp();
            }
        }
        let px = (vx.round() as usize).min(w - 1);
        let py = (vy.round() as usize).min(h - 1);
        plane[py * w + px] = 1.0;
    }
    Ok(Heatmap {
        height: h,
        width: w,
        sigma,
        data,
    })
}

/// Pixel centres inside the quadrilateral become 1 (half-open edge rule).
pub fn render_quad_mask(quad: &Quadrilateral, frame: (usize, usize)) -> Result<RegionMask> {
    if !quad.is_simple() {
        return Err(Error::DegenerateRegion(format!("quadrilateral {:?} is not simple", quad.points)));
    }
    let (h, w) = frame;
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            if quad.contains(x as f64, y as f64) {
                data[y * w + x] = 1.0;
            }
        }
    }
    Ok(RegionMask {
        height: h,
        width: w,
        data,
    })
}

pub fn render_mask(vertices: &VertexSet, frame: (usize, usize)) -> Result<RegionMask> {
    check_frame(vertices, frame)?;
    render_quad_mask(&vertices.quad(), frame)
}

#[inline]
fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_len(pred: usize, gt: usize, what: &str) -> Result<()> {
    if pred != gt {
        return Err(Error::Shape(format!("{what}: prediction has {pred} values, target has {gt}")));
    }
    Ok(())
}

/// Summed penalty-reduced focal loss over all channels and pixels.
pub fn focal_heatmap_loss<T: Real>(pred: &[T], gt: &Heatmap, alpha: f64, beta: f64) -> Result<f64> {
    check_len(pred.len(), gt.data.len(), "heatmap loss")?;
    Ok(focal_terms(pred, &gt.data, alpha, beta, None))
}

/// Loss plus `scale * dL/dz` written to `grad`, where `pred = sigmoid(z)`.
///
/// The gradient is the closed form of the chain rule through the sigmoid,
/// evaluated at the clamped probability.
pub fn focal_heatmap_loss_grad<T: Real>(pred: &[T], gt: &[f64], alpha: f64, beta: f64, scale: f64, grad: &mut [T]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), grad.len());
    focal_terms(pred, gt, alpha, beta, Some((scale, grad)))
}

fn focal_terms<T: Real>(pred: &[T], gt: &[f64], alpha: f64, beta: f64, mut grad: Option<(f64, &mut [T])>) -> f64 {
    let mut sum = 0.0;
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        let p = clamp_p(p.f64());
        let q = 1.0 - p;
        let (term, dz) = if g == 1.0 {
            let qa = q.powf(alpha);
            (qa * p.ln(), qa * q - alpha * p * qa * p.ln())
        } else {
            let w = (1.0 - g).powf(beta);
            let pa = p.powf(alpha);
            (w * pa * q.ln(), w * (alpha * pa * q * q.ln() - pa * p))
        };
        sum -= term;
        if let Some((scale, g)) = grad.as_mut() {
            g[i] = T::c(-dz * *scale);
        }
    }
    sum
}

/// Mean binary cross-entropy over all pixels.
pub fn bce_mask_loss<T: Real>(pred: &[T], gt: &RegionMask) -> Result<f64> {
    check_len(pred.len(), gt.data.len(), "mask loss")?;
    Ok(bce_terms(pred, &gt.data, None))
}

/// Loss plus `scale * dL/dz` for `pred = sigmoid(z)`.
pub fn bce_mask_loss_grad<T: Real>(pred: &[T], gt: &[f64], scale: f64, grad: &mut [T]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len(), grad.len());
    bce_terms(pred, gt, Some((scale, grad)))
}

fn bce_terms<T: Real>(pred: &[T], gt: &[f64], mut grad: Option<(f64, &mut [T])>) -> f64 {
    let n = pred.len().max(1) as f64;
    let mut sum = 0.0;
    for (i, (&p, &m)) in pred.iter().zip(gt).enumerate() {
        let p = clamp_p(p.f64());
        sum -= m * p.ln() + (1.0 - m) * (1.0 - p).ln();
        if let Some((scale, g)) = grad.as_mut() {
            g[i] = T::c((p - m) / n * *scale);
        }
    }
    sum / n
}

/// `λ_det·det + λ_seg·seg`; pass `seg = 0` when the segmentation head is off.
pub fn total_loss(det: f64, seg: f64, w: &LossWeights) -> f64 {
    w.lambda_det * det + w.lambda_seg * seg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Heatmap {
        Heatmap {
            height: 1,
            width: 1,
            sigma: 5.0,
            data: vec![v],
        }
    }

    #[test]
    fn scalar_examples() {
        let a = focal_heatmap_loss(&[0.9f64], &one(1.0), 2.0, 4.0).unwrap();
        assert!((a - 1.0536e-3).abs() < 1e-7, "{a}");
        let b = focal_heatmap_loss(&[0.2f64], &one(0.5), 2.0, 4.0).unwrap();
        assert!((b - 5.5786e-4).abs() < 1e-8, "{b}");
        let m = RegionMask {
            height: 1,
            width: 2,
            data: vec![1.0, 0.0],
        };
        let c = bce_mask_loss(&[0.5f64, 0.5], &m).unwrap();
        assert!((c - std::f64::consts::LN_2).abs() < 1e-12);
        let ones = RegionMask {
            height: 1,
            width: 1,
            data: vec![1.0],
        };
        assert!((bce_mask_loss(&[0.25f64], &ones).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert!((total_loss(0.5, 0.03, &w) - 0.8).abs() < 1e-12);
        assert_eq!(total_loss(1.25, 0.0, &w), 1.25);
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for &(z, g) in &[(0.3, 1.0), (-1.2, 0.4), (2.0, 0.0), (-0.5, 1.0)] {
            let mut grad = [0.0f64];
            focal_heatmap_loss_grad(&[sig(z)], &[g], 2.0, 4.0, 1.0, &mut grad);
            let e = 1e-6;
            let f = |z: f64| focal_terms(&[sig(z)], &[g], 2.0, 4.0, None);
            let fd = (f(z + e) - f(z - e)) / (2.0 * e);
            assert!((grad[0] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{z} {g}: {} vs {fd}", grad[0]);
            let mut grad = [0.0f64];
            bce_mask_loss_grad(&[sig(z)], &[g], 1.0, &mut grad);
            let f = |z: f64| bce_terms(&[sig(z)], &[g], None);
            let fd = (f(z + e) - f(z - e)) / (2.0 * e);
            assert!((grad[0] - fd).abs() < 1e-6, "{} vs {fd}", grad[0]);
        }
    }

    #[test]
    fn heatmap_peak_and_sigma_radius() {
        let v = VertexSet::rect(50.0, 40.0, 150.0, 140.0, (200, 200)).unwrap();
        let hm = render_heatmaps(&v, (200, 200), 5.0).unwrap();
        assert_eq!(hm.at(0, 40, 50), 1.0);
        assert!((hm.at(0, 40, 55) - (-0.5f64).exp()).abs() < 1e-12);
        assert!(hm.at(1, 40, 50) < 1e-80);
    }

    #[test]
    fn mask_examples() {
        let v = VertexSet::rect(100.0, 100.0, 300.0, 300.0, (400, 400)).unwrap();
        assert_eq!(render_mask(&v, (400, 400)).unwrap().sum(), 40000.0);
        let full = Quadrilateral::new([[-0.5, -0.5], [39.5, -0.5], [39.5, 29.5], [-0.5, 29.5]]);
        assert!(render_quad_mask(&full, (30, 40)).unwrap().data.iter().all(|&m| m == 1.0));
        let z = VertexSet::new([[5.0, 5.0]; 4], (10, 10)).unwrap();
        assert!(matches!(render_mask(&z, (10, 10)), Err(Error::DegenerateRegion(_))));
    }

    #[test]
    fn out_of_frame_vertex_is_rejected() {
        let v = VertexSet {
            points: [[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]],
            frame: (20, 20),
        };
        assert!(matches!(render_heatmaps(&v, (10, 10), 5.0), Err(Error::OutOfFrame { .. })));
    }
}
