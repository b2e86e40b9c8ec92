use super::{Module, Param, Real, Tensor};

/// Per-channel batch normalization over `N×H×W`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(vec![T::one(); c], false),
            beta: Param::new(vec![T::zero(); c], false),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.channels(), "batchnorm channels");
        let mut y = x.clone();
        for c in 0..x.c {
            let inv = 1.0 / (self.running_var[c].f64() + self.eps).sqrt();
            let scale = T::c(self.gamma.value[c].f64() * inv);
            let shift = T::c(self.beta.value[c].f64() - self.running_mean[c].f64() * self.gamma.value[c].f64() * inv);
            for n in 0..x.n {
                y.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        if !train {
            self.cache = None;
            return self.infer(x);
        }
        assert_eq!(x.c, self.channels(), "batchnorm channels");
        let count = (x.n * x.h * x.w) as f64;
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = vec![0.0; x.c];
        for c in 0..x.c {
            let mut sum = 0.0;
            for n in 0..x.n {
                sum += x.plane(n, c).iter().map(|v| v.f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for n in 0..x.n {
                sq += x.plane(n, c).iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = inv;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for n in 0..x.n {
                let src = x.plane(n, c);
                let xh = xhat.plane_mut(n, c);
                for (d, s) in xh.iter_mut().zip(src) {
                    *d = T::c((s.f64() - mean) * inv);
                }
                let yp = y.plane_mut(n, c);
                for (d, s) in yp.iter_mut().zip(xhat.plane(n, c)) {
                    *d = g * *s + b;
                }
            }
            let m = self.momentum;
            self.running_mean[c] = T::c((1.0 - m) * self.running_mean[c].f64() + m * mean);
            self.running_var[c] = T::c((1.0 - m) * self.running_var[c].f64() + m * var);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let BnCache { xhat, inv_std } = self.cache.take().expect("batchnorm backward without forward");
        assert!(dy.same_shape(&xhat));
        let count = (dy.n * dy.h * dy.w) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..dy.c {
            let mut dbeta = 0.0;
            let mut dgamma = 0.0;
            for n in 0..dy.n {
                for (g, xh) in dy.plane(n, c).iter().zip(xhat.plane(n, c)) {
                    dbeta += g.f64();
                    dgamma += g.f64() * xh.f64();
                }
            }
            self.beta.grad[c] += T::c(dbeta);
            self.gamma.grad[c] += T::c(dgamma);
            let k = self.gamma.value[c].f64() * inv_std[c] / count;
            for n in 0..dy.n {
                let src = dy.plane(n, c);
                let xh = xhat.plane(n, c);
                for ((d, g), x) in dx.plane_mut(n, c).iter_mut().zip(src).zip(xh) {
                    *d = T::c(k * (count * g.f64() - dbeta - x.f64() * dgamma));
                }
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
