use super::{Module, Real};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `module`.
    ///
    /// Frozen parameters are skipped entirely, so their values stay
    /// bit-identical no matter how many steps run.
    pub fn step<T: Real, M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut slot = 0;
        let moments = &mut self.moments;
        let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        module.visit_params(&mut |p| {
            if moments.len() <= slot {
                moments.push((vec![0.0; p.len()], vec![0.0; p.len()]));
            }
            let (m, v) = &mut moments[slot];
            slot += 1;
            if !p.trainable {
                return;
            }
            assert_eq!(m.len(), p.len(), "optimizer state does not match parameter layout");
            for i in 0..p.len() {
                let g = p.grad[i].f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mut w = p.value[i].f64();
                if p.decay {
                    w -= lr * wd * w;
                }
                w -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                p.value[i] = T::c(w);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Module, Param};
    use super::*;

    struct Quad {
        p: Param<f64>,
        frozen: Param<f64>,
    }

    impl Module<f64> for Quad {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.p);
            f(&mut self.frozen);
        }
    }

    #[test]
    fn minimizes_quadratic_and_skips_frozen() {
        let mut q = Quad {
            p: Param::new(vec![5.0, -3.0], false),
            frozen: Param::frozen(vec![1.25]),
        };
        let mut opt = Adam::new(0.1, 0.0);
        for _ in 0..500 {
            q.zero_grad();
            let g: Vec<f64> = q.p.value.iter().map(|w| 2.0 * (w - 1.0)).collect();
            q.p.accumulate(&g);
            q.frozen.grad[0] = 3.0;
            opt.step(&mut q);
        }
        assert!(q.p.value.iter().all(|w| (w - 1.0).abs() < 1e-2));
        assert_eq!(q.frozen.value[0].to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quad {
            p: Param::new(vec![0.0], true),
            frozen: Param::frozen(vec![0.0]),
        };
        q.p.grad[0] = 42.0;
        let mut opt = Adam::new(1e-3, 1e-5);
        opt.step(&mut q);
        assert!((q.p.value[0] + 1e-3).abs() < 1e-9);
    }
}
