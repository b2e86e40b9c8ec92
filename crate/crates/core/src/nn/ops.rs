//! Stateless layers and their adjoints.

use super::{Real, Tensor};

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward<T: Real>(dy: &Tensor<T>, y: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Sigmoid kept inside the open interval `(0,1)` at the working precision.
#[inline]
pub fn probability<T: Real>(v: T) -> T {
    sigmoid(v).max(T::min_positive_value()).min(T::one() - T::epsilon())
}

pub fn probability_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(probability)
}

/// Per-sample, per-channel spatial mean: returns `N×C` row-major.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let hw = x.plane_len() as f64;
    let mut out = Vec::with_capacity(x.n * x.c);
    for n in 0..x.n {
        for c in 0..x.c {
            out.push(T::c(x.plane(n, c).iter().map(|v| v.f64()).sum::<f64>() / hw));
        }
    }
    out
}

/// Adjoint of [`global_avg_pool`].
pub fn global_avg_pool_backward<T: Real>(dz: &[T], n: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(n, c, h, w);
    let inv = T::c(1.0 / (h * w) as f64);
    for i in 0..n {
        for ch in 0..c {
            let g = dz[i * c + ch] * inv;
            dx.plane_mut(i, ch).iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

/// Adds a per-sample channel vector (`N×C`) to every pixel.
pub fn add_channel_vector<T: Real>(x: &mut Tensor<T>, v: &[T]) {
    assert_eq!(v.len(), x.n * x.c);
    for n in 0..x.n {
        for c in 0..x.c {
            let b = v[n * x.c + c];
            x.plane_mut(n, c).iter_mut().for_each(|p| *p += b);
        }
    }
}

/// Sums every plane: the adjoint of [`add_channel_vector`] w.r.t. the vector.
pub fn sum_planes<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(x.n * x.c);
    for n in 0..x.n {
        for c in 0..x.c {
            out.push(T::c(x.plane(n, c).iter().map(|v| v.f64()).sum::<f64>()));
        }
    }
    out
}

/// 3×3, stride 2, padding 1 max pooling with recorded argmax.
#[derive(Debug, Clone, Default)]
pub struct MaxPool {
    cache: Option<(usize, usize, usize, usize, Vec<usize>)>,
}

impl MaxPool {
    pub const K: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * Self::PAD - Self::K) / Self::STRIDE + 1, (w + 2 * Self::PAD - Self::K) / Self::STRIDE + 1)
    }

    fn run<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let (ho, wo) = Self::out_hw(x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, ho, wo);
        let mut arg = vec![0usize; x.n * x.c * ho * wo];
        for n in 0..x.n {
            for c in 0..x.c {
                let plane = x.plane(n, c);
                let base = (n * x.c + c) * ho * wo;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut bi = 0;
                        for ky in 0..Self::K {
                            let iy = (oy * Self::STRIDE + ky) as isize - Self::PAD as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..Self::K {
                                let ix = (ox * Self::STRIDE + kx) as isize - Self::PAD as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let idx = iy as usize * x.w + ix as usize;
                                if plane[idx] > best {
                                    best = plane[idx];
                                    bi = idx;
                                }
                            }
                        }
                        y.data[base + oy * wo + ox] = best;
                        arg[base + oy * wo + ox] = bi;
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::run(x).0
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let (y, arg) = Self::run(x);
        self.cache = train.then_some((x.n, x.c, x.h, x.w, arg));
        y
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w, arg) = self.cache.take().expect("maxpool backward without forward");
        let mut dx = Tensor::zeros(n, c, h, w);
        let po = dy.plane_len();
        for i in 0..n * c {
            let plane = &mut dx.data[i * h * w..(i + 1) * h * w];
            for j in 0..po {
                plane[arg[i * po + j]] += dy.data[i * po + j];
            }
        }
        dx
    }
}

/// Bilinear interpolation taps along one axis (half-pixel centers,
/// `align_corners = false`).
#[derive(Debug, Clone)]
struct Taps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl Taps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(s - i0 as f64);
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resize of every plane to `h×w`.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let ty = Taps::new(x.h, h);
    let tx = Taps::new(x.w, w);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    for n in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for oy in 0..h {
                let (r0, r1, fy) = (ty.lo[oy] * x.w, ty.hi[oy] * x.w, T::c(ty.frac[oy]));
                for ox in 0..w {
                    let (c0, c1, fx) = (tx.lo[ox], tx.hi[ox], T::c(tx.frac[ox]));
                    let top = src[r0 + c0] + (src[r0 + c1] - src[r0 + c0]) * fx;
                    let bot = src[r1 + c0] + (src[r1 + c1] - src[r1 + c0]) * fx;
                    dst[oy * w + ox] = top + (bot - top) * fy;
                }
            }
        }
    }
    y
}

/// Adjoint of [`resize_bilinear`] from an `h_in×w_in` source.
pub fn resize_bilinear_backward<T: Real>(dy: &Tensor<T>, h_in: usize, w_in: usize) -> Tensor<T> {
    let ty = Taps::new(h_in, dy.h);
    let tx = Taps::new(w_in, dy.w);
    let mut dx = Tensor::zeros(dy.n, dy.c, h_in, w_in);
    for n in 0..dy.n {
        for c in 0..dy.c {
            let src = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for oy in 0..dy.h {
                let (r0, r1) = (ty.lo[oy] * w_in, ty.hi[oy] * w_in);
                let fy = T::c(ty.frac[oy]);
                for ox in 0..dy.w {
                    let g = src[oy * dy.w + ox];
                    let (c0, c1) = (tx.lo[ox], tx.hi[ox]);
                    let fx = T::c(tx.frac[ox]);
                    let gt = g * (T::one() - fy);
                    let gb = g * fy;
                    dst[r0 + c0] += gt * (T::one() - fx);
                    dst[r0 + c1] += gt * fx;
                    dst[r1 + c0] += gb * (T::one() - fx);
                    dst[r1 + c1] += gb * fx;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_upsample_of_constant_is_constant() {
        let x = Tensor::<f64>::from_vec(1, 1, 2, 2, vec![3.0; 4]);
        let y = resize_bilinear(&x, 8, 8);
        assert!(y.data.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn bilinear_half_pixel_convention() {
        // 2 → 4 upsampling: outputs sit at source coordinates -0.25, 0.25, 0.75, 1.25.
        let x = Tensor::<f64>::from_vec(1, 1, 1, 2, vec![0.0, 1.0]);
        let y = resize_bilinear(&x, 1, 4);
        assert_eq!(y.data, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x = Tensor::<f64>::from_vec(1, 2, 3, 5, (0..30).map(|v| (v as f64 * 0.37).sin()).collect());
        let y = resize_bilinear(&x, 12, 20);
        let dy = y.map(|v| v.cos());
        let dx = resize_bilinear_backward(&dy, 3, 5);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::<f64>::from_vec(1, 1, 4, 4, (0..16).map(|v| v as f64).collect());
        let mut mp = MaxPool::default();
        let y = mp.forward(&x, true);
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = mp.backward(&Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(dx.data[5], 1.0);
        assert_eq!(dx.data[15], 4.0);
        assert_eq!(dx.data.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
