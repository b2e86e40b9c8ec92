use super::Real;

/// Dense `N×C×H×W` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let off = (n * self.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let off = (n * self.c + c) * p;
        &mut self.data[off..off + p]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat shape mismatch");
        let mut out = Self::zeros(a.n, a.c + b.c, a.h, a.w);
        let (sa, sb) = (a.sample_len(), b.sample_len());
        for n in 0..a.n {
            let dst = out.sample_mut(n);
            dst[..sa].copy_from_slice(a.sample(n));
            dst[sa..sa + sb].copy_from_slice(b.sample(n));
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        assert!(first <= self.c);
        let mut a = Self::zeros(self.n, first, self.h, self.w);
        let mut b = Self::zeros(self.n, self.c - first, self.h, self.w);
        let sa = a.sample_len();
        for n in 0..self.n {
            let src = self.sample(n);
            a.sample_mut(n).copy_from_slice(&src[..sa]);
            b.sample_mut(n).copy_from_slice(&src[sa..]);
        }
        (a, b)
    }

    /// Crops `h×w` starting at `(top, left)` from every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(top + h <= self.h && left + w <= self.w, "crop out of bounds");
        let mut out = Self::zeros(self.n, self.c, h, w);
        for n in 0..self.n {
            for c in 0..self.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..h {
                    let s = (top + y) * self.w + left;
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[s..s + w]);
                }
            }
        }
        out
    }

    /// Places every plane at `(top, left)` inside a zero tensor of size `h×w`.
    pub fn embed(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(top + self.h <= h && left + self.w <= w, "embed out of bounds");
        let mut out = Self::zeros(self.n, self.c, h, w);
        for n in 0..self.n {
            for c in 0..self.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..self.h {
                    let d = (top + y) * w + left;
                    dst[d..d + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
                }
            }
        }
        out
    }

    /// Mirror padding without edge repetition (`-1 → 1`).
    pub fn reflect_pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let (h, w) = (self.h + top + bottom, self.w + left + right);
        let ys: Vec<usize> = (0..h).map(|y| reflect_index(y as isize - top as isize, self.h)).collect();
        let xs: Vec<usize> = (0..w).map(|x| reflect_index(x as isize - left as isize, self.w)).collect();
        let mut out = Self::zeros(self.n, self.c, h, w);
        for n in 0..self.n {
            for c in 0..self.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (y, &sy) in ys.iter().enumerate() {
                    let row = &src[sy * self.w..(sy + 1) * self.w];
                    for (x, &sx) in xs.iter().enumerate() {
                        dst[y * w + x] = row[sx];
                    }
                }
            }
        }
        out
    }
}

/// Reflect-101 index mapping; handles pads wider than the signal by folding.
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_vec(2, 1, 1, 2, vec![1., 2., 3., 4.]);
        let b = Tensor::<f32>::from_vec(2, 2, 1, 2, (0..8).map(|v| v as f32).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.c, 3);
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn crop_of_embed_is_identity() {
        let t = Tensor::<f64>::from_vec(1, 2, 2, 3, (0..12).map(|v| v as f64).collect());
        assert_eq!(t.embed(1, 2, 5, 6).crop(1, 2, 2, 3), t);
    }
}
