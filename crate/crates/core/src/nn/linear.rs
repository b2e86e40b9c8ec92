use rand::Rng;

use super::{gemm, Layout, Module, Param, Real};

/// Fully connected layer on `N×in` row-major batches.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub fan_in: usize,
    pub fan_out: usize,
    cache: Option<(usize, Vec<T>)>,
}

impl<T: Real> Linear<T> {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = (0..fan_in * fan_out).map(|_| T::c(rng.random_range(-bound..bound))).collect();
        let bias = (0..fan_out).map(|_| T::c(rng.random_range(-bound..bound))).collect();
        Self::from_weights(fan_in, fan_out, weight, bias)
    }

    pub fn from_weights(fan_in: usize, fan_out: usize, weight: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weight.len(), fan_in * fan_out);
        assert_eq!(bias.len(), fan_out);
        Self {
            weight: Param::new(weight, true),
            bias: Param::new(bias, true),
            fan_in,
            fan_out,
            cache: None,
        }
    }

    pub fn infer(&self, x: &[T], n: usize) -> Vec<T> {
        assert_eq!(x.len(), n * self.fan_in);
        let mut y = Vec::with_capacity(n * self.fan_out);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.fan_in,
            self.fan_out,
            T::one(),
            x,
            Layout::rows(self.fan_in),
            &self.weight.value,
            Layout::transposed(self.fan_in),
            T::one(),
            &mut y,
            Layout::rows(self.fan_out),
        );
        y
    }

    pub fn forward(&mut self, x: &[T], n: usize, train: bool) -> Vec<T> {
        let y = self.infer(x, n);
        self.cache = train.then(|| (n, x.to_vec()));
        y
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let (n, x) = self.cache.take().expect("linear backward without forward");
        assert_eq!(dy.len(), n * self.fan_out);
        gemm(
            self.fan_out,
            n,
            self.fan_in,
            T::one(),
            dy,
            Layout::transposed(self.fan_out),
            &x,
            Layout::rows(self.fan_in),
            T::one(),
            &mut self.weight.grad,
            Layout::rows(self.fan_in),
        );
        for row in dy.chunks(self.fan_out) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); n * self.fan_in];
        gemm(
            n,
            self.fan_out,
            self.fan_in,
            T::one(),
            dy,
            Layout::rows(self.fan_out),
            &self.weight.value,
            Layout::rows(self.fan_in),
            T::zero(),
            &mut dx,
            Layout::rows(self.fan_in),
        );
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
