use super::Real;

/// A learnable (or frozen) parameter with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Frozen parameters keep their values through optimizer steps.
    pub trainable: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>, decay: bool) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self {
            value,
            grad,
            trainable: true,
            decay,
        }
    }

    pub fn frozen(value: Vec<T>) -> Self {
        let mut p = Self::new(value, false);
        p.trainable = false;
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate(&mut self, g: &[T]) {
        assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Anything that owns parameters and persistent buffers.
///
/// Visiting order is fixed per architecture; checkpoints and optimizer state
/// rely on it.
pub trait Module<T: Real> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Non-learned state that must survive a checkpoint (e.g. running statistics).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Vec<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}
