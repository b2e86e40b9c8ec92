use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{gemm, Layout, Module, Param, Real, Tensor};
use crate::parallel;

/// Patch-matrix elements materialized at once during inference.
const COL_BUDGET: usize = 1 << 23;

/// Zero-padded 2-D cross-correlation, lowered to GEMM through im2col.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-normal (fan-out, ReLU gain) initialization.
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, rng: &mut R) -> Self {
        let std = (2.0 / (cout * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weight = (0..cout * cin * k * k).map(|_| T::c(normal.sample(rng))).collect();
        Self::from_weights(cin, cout, k, stride, pad, weight, bias.then(|| vec![T::zero(); cout]))
    }

    pub fn from_weights(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Self {
        assert_eq!(weight.len(), cout * cin * k * k, "conv weight size");
        assert!(stride >= 1 && k >= 1);
        Self {
            weight: Param::new(weight, true),
            bias: bias.map(|b| {
                assert_eq!(b.len(), cout);
                Param::new(b, true)
            }),
            cin,
            cout,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn geometry(&self, h: usize, w: usize) -> ColGeometry {
        let (ho, wo) = self.out_hw(h, w);
        ColGeometry {
            cin: self.cin,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            ho,
            wo,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin, "conv input channels");
        let g = self.geometry(x.h, x.w);
        let kk = self.cin * self.k * self.k;
        let hw = g.ho * g.wo;
        let mut out = Tensor::zeros(x.n, self.cout, g.ho, g.wo);
        let weight = &self.weight.value;
        let bias = self.bias.as_ref().map(|b| &b.value);
        let band = (COL_BUDGET / (kk * g.wo).max(1)).clamp(1, g.ho.max(1));
        parallel::for_each_chunk(&mut out.data, self.cout * hw, |n, out_n| {
            let xs = x.sample(n);
            if self.is_pointwise() {
                gemm(self.cout, kk, hw, T::one(), weight, Layout::rows(kk), xs, Layout::rows(hw), T::zero(), out_n, Layout::rows(hw));
            } else {
                let mut oy0 = 0;
                while oy0 < g.ho {
                    let oy1 = (oy0 + band).min(g.ho);
                    let cols = (oy1 - oy0) * g.wo;
                    let col = im2col_rows(xs, &g, oy0, oy1);
                    gemm(
                        self.cout,
                        kk,
                        cols,
                        T::one(),
                        weight,
                        Layout::rows(kk),
                        &col,
                        Layout::rows(cols),
                        T::zero(),
                        &mut out_n[oy0 * g.wo..],
                        Layout::rows(hw),
                    );
                    oy0 = oy1;
                }
            }
            if let Some(b) = bias {
                for (co, plane) in out_n.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        });
        out
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let y = self.infer(x);
        self.cache = train.then(|| x.clone());
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let x = self.cache.take().expect("conv backward without cached forward");
        let g = self.geometry(x.h, x.w);
        let kk = self.cin * self.k * self.k;
        let hw = g.ho * g.wo;
        assert_eq!(dy.shape(), [x.n, self.cout, g.ho, g.wo], "conv grad shape");

        let partial_dw: Vec<Vec<T>> = parallel::map_indexed(x.n, |n| {
            let xs = x.sample(n);
            let col;
            let src = if self.is_pointwise() {
                xs
            } else {
                col = im2col(xs, &g);
                &col
            };
            let mut dw = vec![T::zero(); self.cout * kk];
            gemm(
                self.cout,
                hw,
                kk,
                T::one(),
                dy.sample(n),
                Layout::rows(hw),
                src,
                Layout::transposed(hw),
                T::zero(),
                &mut dw,
                Layout::rows(kk),
            );
            dw
        });
        for dw in &partial_dw {
            self.weight.accumulate(dw);
        }
        if let Some(b) = self.bias.as_mut() {
            for n in 0..dy.n {
                for co in 0..self.cout {
                    let s: T = dy.plane(n, co).iter().copied().sum();
                    b.grad[co] += s;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let weight = &self.weight.value;
        parallel::for_each_chunk(&mut dx.data, x.sample_len(), |n, dx_n| {
            if self.is_pointwise() {
                gemm(
                    kk,
                    self.cout,
                    hw,
                    T::one(),
                    weight,
                    Layout::transposed(kk),
                    dy.sample(n),
                    Layout::rows(hw),
                    T::zero(),
                    dx_n,
                    Layout::rows(hw),
                );
            } else {
                let mut dcol = vec![T::zero(); kk * hw];
                gemm(
                    kk,
                    self.cout,
                    hw,
                    T::one(),
                    weight,
                    Layout::transposed(kk),
                    dy.sample(n),
                    Layout::rows(hw),
                    T::zero(),
                    &mut dcol,
                    Layout::rows(hw),
                );
                col2im(&dcol, &g, dx_n);
            }
        });
        Some(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(b);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ColGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

/// `(cin·k·k) × (ho·wo)` patch matrix of one sample.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ColGeometry) -> Vec<T> {
    im2col_rows(x, g, 0, g.ho)
}

/// Patch matrix restricted to output rows `oy0..oy1`.
pub(crate) fn im2col_rows<T: Real>(x: &[T], g: &ColGeometry, oy0: usize, oy1: usize) -> Vec<T> {
    let hw = (oy1 - oy0) * g.wo;
    let mut col = vec![T::zero(); g.cin * g.k * g.k * hw];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                let dst = &mut col[row..row + hw];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-adds patch gradients into `dx`.
pub(crate) fn col2im<T: Real>(dcol: &[T], g: &ColGeometry, dx: &mut [T]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                let src = &dcol[row..row + hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (ho, wo) = conv.out_hw(x.h, x.w);
        let mut y = Tensor::zeros(x.n, conv.cout, ho, wo);
        for n in 0..x.n {
            for co in 0..conv.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for ci in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        let wi = ((co * conv.cin + ci) * conv.k + ky) * conv.k + kx;
                                        s += conv.weight.value[wi] * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        y.data[((n * conv.cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (7, 2, 3)] {
            let conv = Conv2d::<f64>::new(3, 4, k, s, p, true, &mut rng);
            let x = random_tensor(&mut rng, 2, 3, 9, 10);
            let a = conv.infer(&x);
            let b = naive(&conv, &x);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <dy, conv(x)> is bilinear: d/dx and d/dW must reproduce it exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(k, s, p) in &[(3, 2, 1), (1, 1, 0), (5, 1, 2)] {
            let mut conv = Conv2d::<f64>::new(2, 3, k, s, p, false, &mut rng);
            let x = random_tensor(&mut rng, 2, 2, 8, 7);
            let y = conv.forward(&x, true);
            let dy = random_tensor(&mut rng, y.n, y.c, y.h, y.w);
            let dx = conv.backward(&dy, true).unwrap();
            let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            let via_w: f64 = conv.weight.value.iter().zip(&conv.weight.grad).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }
}
