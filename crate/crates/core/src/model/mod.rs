//! The dual-branch dual-head localization network.

mod blocks;
mod checkpoint;
mod profile;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use blocks::{apply_with_gate, rgby_tensor, Ase, BasicBlock, ContextBranch, ConvBn, Head, PlainBranch, TextureBranch, TextureStem};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use profile::{conv_mult_adds, count_mult_adds, profile_layers, LayerCount, REFERENCE_MULT_ADDS};

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::nn::ops;
use crate::nn::{Module, Param, Real, Tensor};
use crate::raster::Image;

/// Spatial sizes are padded up to a multiple of this.
pub const STRIDE_MULTIPLE: usize = 32;
pub const MIN_INPUT: usize = 64;
/// Detection logits start near a 0.1 prior.
pub const DET_BIAS_INIT: f64 = -2.19;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub texture_channels: usize,
    pub context_stem_channels: usize,
    pub context_stage_channels: [usize; 4],
    pub context_out_channels: usize,
    pub head_channels: usize,
    pub ase_reduction: usize,
    pub filters_trainable: bool,
    pub use_texture_branch: bool,
    pub use_seg_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            texture_channels: 32,
            context_stem_channels: 32,
            context_stage_channels: [32, 64, 128, 256],
            context_out_channels: 32,
            head_channels: 64,
            ase_reduction: 16,
            filters_trainable: false,
            use_texture_branch: true,
            use_seg_head: true,
        }
    }
}

impl ModelConfig {
    /// Every width set to `c`, reduction 2.
    pub fn uniform(c: usize) -> Self {
        Self {
            texture_channels: c,
            context_stem_channels: c,
            context_stage_channels: [c; 4],
            context_out_channels: c,
            head_channels: c,
            ase_reduction: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.texture_channels,
            self.context_stem_channels,
            self.context_out_channels,
            self.head_channels,
            self.ase_reduction,
        ];
        if widths.iter().chain(&self.context_stage_channels).any(|&c| c == 0) {
            return Err(Error::Config("all channel counts must be positive".into()));
        }
        let r = self.ase_reduction;
        for (name, c) in [
            ("head_channels", self.head_channels),
            ("context stage 3", self.context_stage_channels[2]),
            ("context stage 4", self.context_stage_channels[3]),
        ] {
            if c % r != 0 {
                return Err(Error::Config(format!("ase_reduction {r} does not divide {name} ({c})")));
            }
        }
        if self.filters_trainable && !self.use_texture_branch {
            return Err(Error::Config("filters_trainable requires the texture branch".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub enum FeatureBranch<T> {
    Texture(TextureBranch<T>),
    Plain(PlainBranch<T>),
}

impl<T: Real> FeatureBranch<T> {
    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Self::Texture(b) => b.infer(x),
            Self::Plain(b) => b.infer(x),
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Self::Texture(b) => b.forward(x),
            Self::Plain(b) => b.forward(x),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) {
        match self {
            Self::Texture(b) => b.backward(dy),
            Self::Plain(b) => b.backward(dy),
        }
    }
}

impl<T: Real> Module<T> for FeatureBranch<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Self::Texture(b) => b.visit_params(f),
            Self::Plain(b) => b.visit_params(f),
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        match self {
            Self::Texture(b) => b.visit_buffers(f),
            Self::Plain(b) => b.visit_buffers(f),
        }
    }
}

/// Reflect padding that brings `h×w` up to multiples of 32, centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadPlan {
    pub h: usize,
    pub w: usize,
    pub top: usize,
    pub left: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl PadPlan {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::InputTooSmall(format!("input {h}x{w}; both sides must be at least {MIN_INPUT}")));
        }
        let up = |v: usize| v.div_ceil(STRIDE_MULTIPLE) * STRIDE_MULTIPLE;
        let (padded_h, padded_w) = (up(h), up(w));
        Ok(Self {
            h,
            w,
            top: (padded_h - h) / 2,
            left: (padded_w - w) / 2,
            padded_h,
            padded_w,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.h == self.padded_h && self.w == self.padded_w
    }

    pub fn pad<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        if self.is_identity() {
            return x.clone();
        }
        x.reflect_pad(
            self.top,
            self.padded_h - self.h - self.top,
            self.left,
            self.padded_w - self.w - self.left,
        )
    }

    pub fn crop<T: Real>(&self, y: &Tensor<T>) -> Tensor<T> {
        if self.is_identity() {
            return y.clone();
        }
        y.crop(self.top, self.left, self.h, self.w)
    }

    /// Adjoint of [`crop`](Self::crop): zero-fills the border.
    pub fn uncrop<T: Real>(&self, dy: &Tensor<T>) -> Tensor<T> {
        if self.is_identity() {
            return dy.clone();
        }
        dy.embed(self.top, self.left, self.padded_h, self.padded_w)
    }
}

/// Sigmoid outputs at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs<T> {
    pub heatmaps: Tensor<T>,
    pub mask: Option<Tensor<T>>,
}

/// Logits at input resolution, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutputs<T> {
    pub det_logits: Tensor<T>,
    pub seg_logits: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Dbdh<T> {
    pub config: ModelConfig,
    pub bank: FilterBank,
    pub features: FeatureBranch<T>,
    pub context: ContextBranch<T>,
    pub det: Head<T>,
    pub seg: Option<Head<T>>,
    cache: Option<(PadPlan, usize)>,
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

impl<T: Real> Dbdh<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_bank(config, FilterBank::standard(), seed)
    }

    /// Each component draws from its own generator stream, so toggling one
    /// part of the architecture leaves the others' initial weights unchanged.
    pub fn with_bank(config: ModelConfig, bank: FilterBank, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let ct = c.texture_channels;
        let features = if c.use_texture_branch {
            FeatureBranch::Texture(TextureBranch::new(&bank, ct, c.filters_trainable, &mut stream(seed, 1)))
        } else {
            FeatureBranch::Plain(PlainBranch::new(ct, &mut stream(seed, 1)))
        };
        let context = ContextBranch::new(
            c.context_stem_channels,
            c.context_stage_channels,
            c.context_out_channels,
            c.ase_reduction,
            &mut stream(seed, 2),
        );
        let fused = ct + c.context_out_channels;
        let det = Head::new(fused, c.head_channels, 4, c.ase_reduction, DET_BIAS_INIT, &mut stream(seed, 3));
        let seg = c
            .use_seg_head
            .then(|| Head::new(fused, c.head_channels, 1, c.ase_reduction, 0.0, &mut stream(seed, 4)));
        Ok(Self {
            config,
            bank,
            features,
            context,
            det,
            seg,
            cache: None,
        })
    }

    /// Current filter-bank weights (`62×25`), if the texture branch exists.
    pub fn filter_weights(&self) -> Option<&[T]> {
        match &self.features {
            FeatureBranch::Texture(b) => Some(&b.stem.bank.value),
            FeatureBranch::Plain(_) => None,
        }
    }

    fn check_input(x: &Tensor<T>) -> Result<PadPlan> {
        if x.c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {}", x.c)));
        }
        if x.n == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        PadPlan::new(x.h, x.w)
    }

    fn fuse(&self, x: &Tensor<T>) -> Tensor<T> {
        let tex = self.features.infer(x);
        let ctx = self.context.infer(x);
        Tensor::concat_channels(&tex, &ctx)
    }

    /// Detection heatmaps in `(0,1)`, `N×4×H×W`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let plan = Self::check_input(x)?;
        let xp = plan.pad(x);
        let cat = self.fuse(&xp);
        let logits = self.det.infer(&cat, plan.padded_h, plan.padded_w);
        Ok(ops::probability_tensor(&plan.crop(&logits)))
    }

    /// Inference including the segmentation head, when present.
    pub fn infer_with_mask(&self, x: &Tensor<T>) -> Result<ModelOutputs<T>> {
        let plan = Self::check_input(x)?;
        let xp = plan.pad(x);
        let cat = self.fuse(&xp);
        let heatmaps = ops::probability_tensor(&plan.crop(&self.det.infer(&cat, plan.padded_h, plan.padded_w)));
        let mask = self
            .seg
            .as_ref()
            .map(|s| ops::probability_tensor(&plan.crop(&s.infer(&cat, plan.padded_h, plan.padded_w))));
        Ok(ModelOutputs { heatmaps, mask })
    }

    /// Training-mode pass (batch statistics, caches kept for [`backward`](Self::backward)).
    pub fn forward_train(&mut self, x: &Tensor<T>, with_seg: bool) -> Result<TrainOutputs<T>> {
        let plan = Self::check_input(x)?;
        let xp = plan.pad(x);
        let tex = self.features.forward(&xp);
        let ctx = self.context.forward(&xp);
        let tex_c = tex.c;
        let cat = Tensor::concat_channels(&tex, &ctx);
        let det_logits = plan.crop(&self.det.forward(&cat, plan.padded_h, plan.padded_w));
        let seg_logits = match self.seg.as_mut() {
            Some(s) if with_seg => Some(plan.crop(&s.forward(&cat, plan.padded_h, plan.padded_w))),
            _ => None,
        };
        self.cache = Some((plan, tex_c));
        Ok(TrainOutputs { det_logits, seg_logits })
    }

    /// Spec-level forward: masks are produced only in training mode.
    pub fn forward(&mut self, x: &Tensor<T>, train_mode: bool) -> Result<ModelOutputs<T>> {
        if !train_mode {
            return Ok(ModelOutputs {
                heatmaps: self.infer(x)?,
                mask: None,
            });
        }
        let out = self.forward_train(x, true)?;
        self.cache = None;
        Ok(ModelOutputs {
            heatmaps: ops::probability_tensor(&out.det_logits),
            mask: out.seg_logits.as_ref().map(ops::probability_tensor),
        })
    }

    /// Accumulates parameter gradients from logit gradients.
    pub fn backward(&mut self, d_det: &Tensor<T>, d_seg: Option<&Tensor<T>>) {
        let (plan, tex_c) = self.cache.take().expect("backward without forward_train");
        let mut dcat = self.det.backward(&plan.uncrop(d_det));
        if let (Some(seg), Some(ds)) = (self.seg.as_mut(), d_seg) {
            dcat.add_assign(&seg.backward(&plan.uncrop(ds)));
        }
        let (dtex, dctx) = dcat.split_channels(tex_c);
        self.features.backward(&dtex);
        self.context.backward(&dctx);
    }

    pub fn mult_adds(&self, h: usize, w: usize) -> Result<u64> {
        count_mult_adds(&self.config, (h, w))
    }

    /// Copies all parameters and buffers into a model of another precision.
    pub fn cast<U: Real>(&mut self) -> Dbdh<U> {
        let mut out = Dbdh::<U>::with_bank(self.config.clone(), self.bank.clone(), 0).expect("validated config");
        let mut values = Vec::new();
        self.visit_params(&mut |p| values.push(p.value.iter().map(|v| v.f64()).collect::<Vec<_>>()));
        let mut it = values.into_iter();
        out.visit_params(&mut |p| {
            let v = it.next().expect("same layout");
            p.value = v.into_iter().map(U::c).collect();
        });
        let mut bufs = Vec::new();
        self.visit_buffers(&mut |b| bufs.push(b.iter().map(|v| v.f64()).collect::<Vec<_>>()));
        let mut it = bufs.into_iter();
        out.visit_buffers(&mut |b| *b = it.next().expect("same layout").into_iter().map(U::c).collect());
        out
    }
}

impl<T: Real> Module<T> for Dbdh<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.features.visit_params(f);
        self.context.visit_params(f);
        self.det.visit_params(f);
        if let Some(s) = self.seg.as_mut() {
            s.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.features.visit_buffers(f);
        self.context.visit_buffers(f);
        self.det.visit_buffers(f);
        if let Some(s) = self.seg.as_mut() {
            s.visit_buffers(f);
        }
    }
}

/// Stacks equally sized RGB images into an `N×3×H×W` tensor.
pub fn images_to_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut t = Tensor::zeros(images.len(), 3, h, w);
    for (n, img) in images.iter().enumerate() {
        if img.height != h || img.width != w || img.channels != 3 {
            return Err(Error::Shape(format!(
                "batch image {n} is {}x{}x{}, expected {h}x{w}x3",
                img.height, img.width, img.channels
            )));
        }
        for c in 0..3 {
            let plane = t.plane_mut(n, c);
            for (i, v) in plane.iter_mut().enumerate() {
                *v = T::c(img.data[i * 3 + c] as f64);
            }
        }
    }
    Ok(t)
}
