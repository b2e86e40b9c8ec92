//! Building blocks shared by the branches and heads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::filterbank::{FilterBank, BANK_INPUTS, BANK_SIZE, PAD_SIZE};
use crate::nn::ops::{self, MaxPool};
use crate::nn::{gemm, BatchNorm2d, Conv2d, Layout, Linear, Module, Param, Real, Tensor};

/// Convolution (no bias) → batch norm → optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub relu: bool,
    out: Option<Tensor<T>>,
}

impl<T: Real> ConvBn<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, relu: bool, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, k, stride, k / 2, false, rng),
            bn: BatchNorm2d::new(cout),
            relu,
            out: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.bn.infer(&self.conv.infer(x));
        if self.relu {
            ops::relu_inplace(&mut y);
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.conv.forward(x, true);
        let mut y = self.bn.forward(&y, true);
        if self.relu {
            ops::relu_inplace(&mut y);
            self.out = Some(y.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let d = if self.relu {
            let y = self.out.take().expect("ConvBn backward without forward");
            ops::relu_backward(dy, &y)
        } else {
            dy.clone()
        };
        let d = self.bn.backward(&d);
        self.conv.backward(&d, need_dx)
    }
}

impl<T: Real> Module<T> for ConvBn<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_params(f);
        self.bn.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.bn.visit_buffers(f);
    }
}

/// `x ⊙ (1 + s)` with `s` broadcast over each `N×C` plane.
pub fn apply_with_gate<T: Real>(x: &Tensor<T>, s: &[T]) -> Tensor<T> {
    assert_eq!(s.len(), x.n * x.c);
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let g = T::one() + s[n * x.c + c];
            y.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * g);
        }
    }
    y
}

/// Addition squeeze-and-excitation: `x + x ⊙ sigmoid(FC2(relu(FC1(gap(x)))))`.
#[derive(Debug, Clone)]
pub struct Ase<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    cache: Option<AseCache<T>>,
}

#[derive(Debug, Clone)]
struct AseCache<T> {
    x: Tensor<T>,
    hidden: Vec<T>,
    gate: Vec<T>,
}

impl<T: Real> Ase<T> {
    pub fn new<R: Rng>(c: usize, reduction: usize, rng: &mut R) -> Self {
        assert!(reduction > 0 && c % reduction == 0, "ASE reduction must divide channels");
        Self {
            fc1: Linear::new(c, c / reduction, rng),
            fc2: Linear::new(c / reduction, c, rng),
            cache: None,
        }
    }

    fn gate(&self, x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
        let pooled = ops::global_avg_pool(x);
        let mut hidden = self.fc1.infer(&pooled, x.n);
        hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let gate = self.fc2.infer(&hidden, x.n).into_iter().map(ops::sigmoid).collect();
        (hidden, gate)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        apply_with_gate(x, &self.gate(x).1)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let pooled = ops::global_avg_pool(x);
        let mut hidden = self.fc1.forward(&pooled, x.n, true);
        hidden.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let gate: Vec<T> = self.fc2.forward(&hidden, x.n, true).into_iter().map(ops::sigmoid).collect();
        let y = apply_with_gate(x, &gate);
        self.cache = Some(AseCache {
            x: x.clone(),
            hidden,
            gate,
        });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let AseCache { x, hidden, gate } = self.cache.take().expect("ASE backward without forward");
        let mut dx = apply_with_gate(dy, &gate);
        let mut dz = vec![T::zero(); x.n * x.c];
        for n in 0..x.n {
            for c in 0..x.c {
                let ds: f64 = dy.plane(n, c).iter().zip(x.plane(n, c)).map(|(a, b)| a.f64() * b.f64()).sum();
                let s = gate[n * x.c + c].f64();
                dz[n * x.c + c] = T::c(ds * s * (1.0 - s));
            }
        }
        let mut dh = self.fc2.backward(&dz);
        for (d, &h) in dh.iter_mut().zip(&hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        let dp = self.fc1.backward(&dh);
        dx.add_assign(&ops::global_avg_pool_backward(&dp, x.n, x.c, x.h, x.w));
        dx
    }
}

impl<T: Real> Module<T> for Ase<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
}

/// Two 3×3 Conv-BN layers with an identity or projected shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    pub conv1: ConvBn<T>,
    pub conv2: ConvBn<T>,
    pub down: Option<ConvBn<T>>,
    out: Option<Tensor<T>>,
}

impl<T: Real> BasicBlock<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let conv1 = ConvBn::new(cin, cout, 3, stride, true, rng);
        let conv2 = ConvBn::new(cout, cout, 3, 1, false, rng);
        let down = (stride != 1 || cin != cout).then(|| ConvBn::new(cin, cout, 1, stride, false, rng));
        Self {
            conv1,
            conv2,
            down,
            out: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.conv2.infer(&self.conv1.infer(x));
        match &self.down {
            Some(d) => y.add_assign(&d.infer(x)),
            None => y.add_assign(x),
        }
        ops::relu_inplace(&mut y);
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward(x);
        let mut y = self.conv2.forward(&h);
        match self.down.as_mut() {
            Some(d) => y.add_assign(&d.forward(x)),
            None => y.add_assign(x),
        }
        ops::relu_inplace(&mut y);
        self.out = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let y = self.out.take().expect("block backward without forward");
        let d = ops::relu_backward(dy, &y);
        let dh = self.conv2.backward(&d, true).expect("dx");
        let dx_main = self.conv1.backward(&dh, need_dx);
        let dx_short = match self.down.as_mut() {
            Some(down) => down.backward(&d, need_dx),
            None => need_dx.then_some(d),
        };
        match (dx_main, dx_short) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_params(f);
        self.conv2.visit_params(f);
        if let Some(d) = self.down.as_mut() {
            d.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.conv1.visit_buffers(f);
        self.conv2.visit_buffers(f);
        if let Some(d) = self.down.as_mut() {
            d.visit_buffers(f);
        }
    }
}

/// Appends BT.601 luma as a fourth channel.
pub fn rgby_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.c, 3, "RGB input expected");
    let mut out = Tensor::zeros(x.n, 4, x.h, x.w);
    let (wr, wg, wb) = (T::c(0.299), T::c(0.587), T::c(0.114));
    for n in 0..x.n {
        for c in 0..3 {
            out.plane_mut(n, c).copy_from_slice(x.plane(n, c));
        }
        let (r, g, b) = (x.plane(n, 0), x.plane(n, 1), x.plane(n, 2));
        let y: Vec<T> = (0..r.len()).map(|i| wr * r[i] + wg * g[i] + wb * b[i]).collect();
        out.plane_mut(n, 3).copy_from_slice(&y);
    }
    out
}

/// Output convolutions start small so the logits sit at the bias prior.
const OUTPUT_INIT_STD: f64 = 0.01;

const TAPS: usize = PAD_SIZE * PAD_SIZE;
const BANK_PAD: usize = PAD_SIZE / 2;

/// Filter bank followed by a 1×1 compression, evaluated as one 5×5
/// convolution whose kernel is the compression applied to the bank.
#[derive(Debug, Clone)]
pub struct TextureStem<T> {
    /// `62 × 25` kernels, zero-padded to 5×5.
    pub bank: Param<T>,
    /// `Ct × 248` compression weights, input index `channel·62 + kernel`.
    pub compress: Param<T>,
    pub out_channels: usize,
    fused: Option<Conv2d<T>>,
}

impl<T: Real> TextureStem<T> {
    pub fn new<R: Rng>(bank: &FilterBank, out_channels: usize, trainable: bool, rng: &mut R) -> Self {
        let bank_param = if trainable {
            let normal = Normal::new(0.0, (2.0 / TAPS as f64).sqrt()).expect("std");
            Param::new((0..BANK_SIZE * TAPS).map(|_| T::c(normal.sample(rng))).collect(), false)
        } else {
            Param::frozen(bank.padded_matrix().into_iter().map(T::c).collect())
        };
        let cin = BANK_SIZE * BANK_INPUTS;
        let normal = Normal::new(0.0, (2.0 / out_channels as f64).sqrt()).expect("std");
        let compress = (0..out_channels * cin).map(|_| T::c(normal.sample(rng))).collect();
        Self {
            bank: bank_param,
            compress: Param::new(compress, true),
            out_channels,
            fused: None,
        }
    }

    /// Effective `Ct × 4 × 5 × 5` kernel.
    pub fn effective_kernel(&self) -> Vec<T> {
        let ct = self.out_channels;
        let mut e = vec![T::zero(); ct * BANK_INPUTS * TAPS];
        // Rows of the compression are (t, c) pairs once reshaped to (Ct·4) × 62.
        gemm(
            ct * BANK_INPUTS,
            BANK_SIZE,
            TAPS,
            T::one(),
            &self.compress.value,
            Layout::rows(BANK_SIZE),
            &self.bank.value,
            Layout::rows(TAPS),
            T::zero(),
            &mut e,
            Layout::rows(TAPS),
        );
        e
    }

    fn conv(&self) -> Conv2d<T> {
        Conv2d::from_weights(BANK_INPUTS, self.out_channels, PAD_SIZE, 1, 0, self.effective_kernel(), None)
    }

    fn prepare(x: &Tensor<T>) -> Tensor<T> {
        rgby_tensor(x).reflect_pad(BANK_PAD, BANK_PAD, BANK_PAD, BANK_PAD)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.conv().infer(&Self::prepare(x))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut conv = self.conv();
        let y = conv.forward(&Self::prepare(x), true);
        self.fused = Some(conv);
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) {
        let mut conv = self.fused.take().expect("texture stem backward without forward");
        conv.backward(dy, false);
        let de = &conv.weight.grad;
        let rows = self.out_channels * BANK_INPUTS;
        // dW = dE · Kᵀ
        gemm(
            rows,
            TAPS,
            BANK_SIZE,
            T::one(),
            de,
            Layout::rows(TAPS),
            &self.bank.value,
            Layout::transposed(TAPS),
            T::one(),
            &mut self.compress.grad,
            Layout::rows(BANK_SIZE),
        );
        if self.bank.trainable {
            // dK = Wᵀ · dE
            gemm(
                BANK_SIZE,
                rows,
                TAPS,
                T::one(),
                &self.compress.value,
                Layout::transposed(BANK_SIZE),
                de,
                Layout::rows(TAPS),
                T::one(),
                &mut self.bank.grad,
                Layout::rows(TAPS),
            );
        }
    }
}

impl<T: Real> Module<T> for TextureStem<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.bank);
        f(&mut self.compress);
    }
}

/// Filter bank stem → BN-ReLU → 3×3 stride-2 Conv-BN-ReLU.
#[derive(Debug, Clone)]
pub struct TextureBranch<T> {
    pub stem: TextureStem<T>,
    pub bn: BatchNorm2d<T>,
    pub down: ConvBn<T>,
    stem_out: Option<Tensor<T>>,
}

impl<T: Real> TextureBranch<T> {
    pub fn new<R: Rng>(bank: &FilterBank, ct: usize, trainable: bool, rng: &mut R) -> Self {
        Self {
            stem: TextureStem::new(bank, ct, trainable, rng),
            bn: BatchNorm2d::new(ct),
            down: ConvBn::new(ct, ct, 3, 2, true, rng),
            stem_out: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.bn.infer(&self.stem.infer(x));
        ops::relu_inplace(&mut y);
        self.down.infer(&y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.stem.forward(x);
        let mut y = self.bn.forward(&y, true);
        ops::relu_inplace(&mut y);
        let out = self.down.forward(&y);
        self.stem_out = Some(y);
        out
    }

    pub fn backward(&mut self, dy: &Tensor<T>) {
        let d = self.down.backward(dy, true).expect("dx");
        let y = self.stem_out.take().expect("texture backward without forward");
        let d = self.bn.backward(&ops::relu_backward(&d, &y));
        self.stem.backward(&d);
    }
}

impl<T: Real> Module<T> for TextureBranch<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_params(f);
        self.bn.visit_params(f);
        self.down.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.bn.visit_buffers(f);
        self.down.visit_buffers(f);
    }
}

/// Replacement for the texture branch: three 3×3 Conv-BN-ReLU, the second strided.
#[derive(Debug, Clone)]
pub struct PlainBranch<T> {
    pub layers: [ConvBn<T>; 3],
}

impl<T: Real> PlainBranch<T> {
    pub fn new<R: Rng>(ct: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                ConvBn::new(3, ct, 3, 1, true, rng),
                ConvBn::new(ct, ct, 3, 2, true, rng),
                ConvBn::new(ct, ct, 3, 1, true, rng),
            ],
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.layers[0].infer(x);
        self.layers[2].infer(&self.layers[1].infer(&y))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.layers[0].forward(x);
        let y = self.layers[1].forward(&y);
        self.layers[2].forward(&y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) {
        let d = self.layers[2].backward(dy, true).expect("dx");
        let d = self.layers[1].backward(&d, true).expect("dx");
        self.layers[0].backward(&d, false);
    }
}

impl<T: Real> Module<T> for PlainBranch<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params(f));
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_buffers(f));
    }
}

/// ResNet-18 style trunk with ASE after stages 3 and 4, global-context
/// injection, projection and ×16 upsampling to half resolution.
#[derive(Debug, Clone)]
pub struct ContextBranch<T> {
    pub stem: ConvBn<T>,
    pool: MaxPool,
    pub stages: Vec<[BasicBlock<T>; 2]>,
    pub ase3: Ase<T>,
    pub ase4: Ase<T>,
    pub global: Linear<T>,
    pub proj: ConvBn<T>,
    cache: Option<(usize, usize, usize, usize)>,
}

impl<T: Real> ContextBranch<T> {
    pub fn new<R: Rng>(stem_c: usize, stages: [usize; 4], out_c: usize, reduction: usize, rng: &mut R) -> Self {
        let stem = ConvBn::new(3, stem_c, 7, 2, true, rng);
        let mut cin = stem_c;
        let stages: Vec<[BasicBlock<T>; 2]> = stages
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let stride = if i == 0 { 1 } else { 2 };
                let b = [BasicBlock::new(cin, c, stride, rng), BasicBlock::new(c, c, 1, rng)];
                cin = c;
                b
            })
            .collect();
        let c3 = stages_c(&stages, 2);
        let c4 = stages_c(&stages, 3);
        Self {
            stem,
            pool: MaxPool::default(),
            stages,
            ase3: Ase::new(c3, reduction, rng),
            ase4: Ase::new(c4, reduction, rng),
            global: Linear::new(c4, c4, rng),
            proj: ConvBn::new(c4, out_c, 1, 1, true, rng),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.pool.infer(&self.stem.infer(x));
        for (i, stage) in self.stages.iter().enumerate() {
            y = stage[1].infer(&stage[0].infer(&y));
            if i == 2 {
                y = self.ase3.infer(&y);
            }
        }
        let mut y = self.ase4.infer(&y);
        let g = self.global.infer(&ops::global_avg_pool(&y), y.n);
        ops::add_channel_vector(&mut y, &g);
        let p = self.proj.infer(&y);
        ops::resize_bilinear(&p, x.h / 2, x.w / 2)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.stem.forward(x);
        let mut y = self.pool.forward(&y, true);
        for i in 0..self.stages.len() {
            y = self.stages[i][0].forward(&y);
            y = self.stages[i][1].forward(&y);
            if i == 2 {
                y = self.ase3.forward(&y);
            }
        }
        let mut y = self.ase4.forward(&y);
        let g = self.global.forward(&ops::global_avg_pool(&y), y.n, true);
        ops::add_channel_vector(&mut y, &g);
        let p = self.proj.forward(&y);
        self.cache = Some((p.h, p.w, y.h, y.w));
        ops::resize_bilinear(&p, x.h / 2, x.w / 2)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) {
        let (ph, pw, fh, fw) = self.cache.take().expect("context backward without forward");
        let dp = ops::resize_bilinear_backward(dy, ph, pw);
        let mut df = self.proj.backward(&dp, true).expect("dx");
        let dg = self.global.backward(&ops::sum_planes(&df));
        df.add_assign(&ops::global_avg_pool_backward(&dg, df.n, df.c, fh, fw));
        let mut d = self.ase4.backward(&df);
        for i in (0..self.stages.len()).rev() {
            if i == 2 {
                d = self.ase3.backward(&d);
            }
            d = self.stages[i][1].backward(&d, true).expect("dx");
            d = self.stages[i][0].backward(&d, true).expect("dx");
        }
        let d = self.pool.backward(&d);
        self.stem.backward(&d, false);
    }
}

fn stages_c<T: Real>(stages: &[[BasicBlock<T>; 2]], i: usize) -> usize {
    stages[i][1].conv2.conv.cout
}

impl<T: Real> Module<T> for ContextBranch<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_params(f);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.iter_mut().for_each(|b| b.visit_params(f));
            if i == 2 {
                self.ase3.visit_params(f);
            }
        }
        self.ase4.visit_params(f);
        self.global.visit_params(f);
        self.proj.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.stem.visit_buffers(f);
        for stage in self.stages.iter_mut() {
            stage.iter_mut().for_each(|b| b.visit_buffers(f));
        }
        self.proj.visit_buffers(f);
    }
}

/// 3×3 Conv-BN-ReLU → ASE → 3×3 conv with bias → ×2 bilinear upsampling (logits).
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub conv: ConvBn<T>,
    pub ase: Ase<T>,
    pub out: Conv2d<T>,
    cache: Option<(usize, usize)>,
}

impl<T: Real> Head<T> {
    pub fn new<R: Rng>(cin: usize, hidden: usize, outputs: usize, reduction: usize, bias_init: f64, rng: &mut R) -> Self {
        let mut out = Conv2d::new(hidden, outputs, 3, 1, 1, true, rng);
        let shrink = OUTPUT_INIT_STD / (2.0 / (outputs * 9) as f64).sqrt();
        for v in out.weight.value.iter_mut() {
            *v = T::c(Real::f64(*v) * shrink);
        }
        if let Some(b) = out.bias.as_mut() {
            b.value.iter_mut().for_each(|v| *v = T::c(bias_init));
        }
        Self {
            conv: ConvBn::new(cin, hidden, 3, 1, true, rng),
            ase: Ase::new(hidden, reduction, rng),
            out,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let y = self.out.infer(&self.ase.infer(&self.conv.infer(x)));
        ops::resize_bilinear(&y, h, w)
    }

    pub fn forward(&mut self, x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let y = self.conv.forward(x);
        let y = self.ase.forward(&y);
        let y = self.out.forward(&y, true);
        self.cache = Some((y.h, y.w));
        ops::resize_bilinear(&y, h, w)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = self.cache.take().expect("head backward without forward");
        let d = ops::resize_bilinear_backward(dy, h, w);
        let d = self.out.backward(&d, true).expect("dx");
        let d = self.ase.backward(&d);
        self.conv.backward(&d, true).expect("dx")
    }
}

impl<T: Real> Module<T> for Head<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_params(f);
        self.ase.visit_params(f);
        self.out.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.conv.visit_buffers(f);
    }
}
