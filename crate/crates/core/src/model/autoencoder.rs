//! Reconstruction autoencoder assembled from learning blocks.
//!
//! A learning block is `[conv 3×3 | ViT] → batch norm → ReLU → resample`.
//! The encoder has `depth` blocks that halve the spatial size, the latent
//! block is the first layer alone, and the decoder mirrors the encoder with
//! 2× nearest-neighbour upsampling. A final 3×3 convolution and a logistic
//! sigmoid map back to RGB in `[0, 1]`. With skip connections every encoder
//! block output is added to the input of the decoder block at the same
//! resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    join, max_pool2, max_pool2_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2,
    upsample2_backward, BatchNorm2d, BatchNormCache, Conv2d, ConvCache, Param, Parameters, PoolCache, Resample,
};
use super::real::Real;
use super::tensor::Tensor;
use super::vit::{ViTLayerSpec, VitCache, VitLayer};
use super::{patches_to_tensor, tensor_to_patches};
use crate::data::PatchSpec;
use crate::error::{Error, Result};
use crate::imaging::ImagePatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    #[serde(rename = "vit")]
    ViT,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockLocation {
    Outer,
    Inner,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockSide {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningBlockSpec {
    pub kind: LayerKind,
    pub location: BlockLocation,
    /// `None` for the latent block.
    pub side: Option<BlockSide>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub resample: Resample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitPlacement {
    #[default]
    None,
    Outer,
    Inner,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    /// Learning blocks in the encoder (and in the decoder).
    pub depth: usize,
    #[serde(default)]
    pub vit_placement: VitPlacement,
    #[serde(default)]
    pub skip_connections: bool,
    pub base_channels: usize,
    pub input_size: PatchSpec,
    #[serde(default)]
    pub vit: ViTLayerSpec,
    /// Restricts an outer ViT to the encoder side.
    #[serde(default)]
    pub outer_vit_encoder_only: bool,
}

impl AutoencoderSpec {
    pub fn new(depth: usize, input_size: PatchSpec) -> Self {
        AutoencoderSpec {
            depth,
            vit_placement: VitPlacement::None,
            skip_connections: false,
            base_channels: 8,
            input_size,
            vit: ViTLayerSpec::default(),
            outer_vit_encoder_only: false,
        }
    }

    pub fn with_vit(mut self, placement: VitPlacement) -> Self {
        self.vit_placement = placement;
        self
    }

    pub fn with_skips(mut self, on: bool) -> Self {
        self.skip_connections = on;
        self
    }

    pub fn with_base_channels(mut self, c: usize) -> Self {
        self.base_channels = c;
        self
    }

    /// Short human-readable name, e.g. `depth3-outer-vit`.
    pub fn name(&self) -> String {
        let mut s = format!("depth{}", self.depth);
        match self.vit_placement {
            VitPlacement::None => s.push_str("-conv"),
            VitPlacement::Outer => s.push_str("-outer-vit"),
            VitPlacement::Inner => s.push_str("-inner-vit"),
            VitPlacement::Latent => s.push_str("-latent-vit"),
        }
        if self.skip_connections {
            s.push_str("-skip");
        }
        s
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial size `(h, w)` after `levels` halvings.
    fn size_at(&self, levels: usize) -> (usize, usize) {
        (self.input_size.height >> levels, self.input_size.width >> levels)
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.size_at(self.depth);
        (self.channels(self.depth - 1), h, w)
    }

    fn is_vit(&self, location: BlockLocation, side: Option<BlockSide>, index: usize) -> bool {
        match (self.vit_placement, location) {
            (VitPlacement::Outer, BlockLocation::Outer) => {
                !(self.outer_vit_encoder_only && side == Some(BlockSide::Decoder))
            }
            // first inner block on each side, mirrored
            (VitPlacement::Inner, BlockLocation::Inner) => index == 1,
            (VitPlacement::Latent, BlockLocation::Latent) => true,
            _ => false,
        }
    }

    /// Block layout in execution order: encoder, latent, decoder.
    pub fn block_specs(&self) -> Vec<LearningBlockSpec> {
        let d = self.depth;
        let loc = |i: usize| if i == 0 { BlockLocation::Outer } else { BlockLocation::Inner };
        let kind = |l, s, i| if self.is_vit(l, s, i) { LayerKind::ViT } else { LayerKind::Conv };
        let mut out = Vec::with_capacity(2 * d + 1);
        for i in 0..d {
            let side = Some(BlockSide::Encoder);
            out.push(LearningBlockSpec {
                kind: kind(loc(i), side, i),
                location: loc(i),
                side,
                in_channels: if i == 0 { 3 } else { self.channels(i - 1) },
                out_channels: self.channels(i),
                resample: Resample::Down2,
            });
        }
        let lc = self.channels(d - 1);
        out.push(LearningBlockSpec {
            kind: kind(BlockLocation::Latent, None, d),
            location: BlockLocation::Latent,
            side: None,
            in_channels: lc,
            out_channels: lc,
            resample: Resample::None,
        });
        for j in 0..d {
            // j = 0 is the innermost decoder block; it mirrors encoder block d-1-j
            let mirror = d - 1 - j;
            let side = Some(BlockSide::Decoder);
            out.push(LearningBlockSpec {
                kind: kind(loc(mirror), side, mirror),
                location: loc(mirror),
                side,
                in_channels: self.channels(mirror),
                out_channels: if mirror == 0 { self.base_channels } else { self.channels(mirror - 1) },
                resample: Resample::Up2,
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("autoencoder depth must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        let m = 1usize << self.depth;
        let PatchSpec { width, height } = self.input_size;
        if width % m != 0 || height % m != 0 {
            return Err(Error::Config(format!(
                "input {width}×{height} not divisible by 2^depth = {m}"
            )));
        }
        if self.vit_placement == VitPlacement::Inner && self.depth < 2 {
            return Err(Error::Config("inner ViT placement needs depth >= 2".into()));
        }
        for (spec, (h, w)) in self.block_specs().iter().zip(self.block_input_sizes()) {
            if spec.kind == LayerKind::ViT {
                self.vit.validate(h, w)?;
            }
        }
        Ok(())
    }

    /// Spatial size at which each block's first layer runs.
    fn block_input_sizes(&self) -> Vec<(usize, usize)> {
        let d = self.depth;
        (0..d)
            .map(|i| self.size_at(i))
            .chain(std::iter::once(self.size_at(d)))
            .chain((0..d).map(|j| self.size_at(d - j)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum FirstLayer<T> {
    Conv(Conv2d<T>),
    Vit(Box<VitLayer<T>>),
}

#[derive(Clone, Debug)]
pub struct LearningBlock<T> {
    pub spec: LearningBlockSpec,
    pub first: FirstLayer<T>,
    /// Absent in the latent block.
    pub norm: Option<BatchNorm2d<T>>,
}

#[derive(Clone, Debug)]
enum FirstCache<T> {
    Conv(ConvCache<T>),
    Vit(VitCache<T>),
}

#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    first: FirstCache<T>,
    norm: Option<BatchNormCache<T>>,
    relu_out: Option<Tensor<T>>,
    pool: Option<PoolCache>,
}

impl<T: Real> LearningBlock<T> {
    fn new(spec: LearningBlockSpec, vit: &ViTLayerSpec, hw: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Self> {
        let first = match spec.kind {
            LayerKind::Conv => FirstLayer::Conv(Conv2d::new(spec.in_channels, spec.out_channels, 3, rng)),
            LayerKind::ViT => FirstLayer::Vit(Box::new(VitLayer::new(
                *vit,
                spec.in_channels,
                spec.out_channels,
                hw.0,
                hw.1,
                rng,
            )?)),
        };
        let norm = (spec.location != BlockLocation::Latent).then(|| BatchNorm2d::new(spec.out_channels));
        Ok(LearningBlock { spec, first, norm })
    }

    pub fn forward(&self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (mut h, first) = match &self.first {
            FirstLayer::Conv(c) => {
                let (y, cache) = c.forward(x);
                (y, FirstCache::Conv(cache))
            }
            FirstLayer::Vit(v) => {
                let (y, cache) = v.forward(x)?;
                (y, FirstCache::Vit(cache))
            }
        };
        let mut cache = BlockCache {
            first,
            norm: None,
            relu_out: None,
            pool: None,
        };
        if let Some(bn) = &self.norm {
            let (y, c) = bn.forward(&h, train);
            cache.norm = Some(c);
            h = relu(&y);
            cache.relu_out = Some(h.clone());
        }
        match self.spec.resample {
            Resample::Down2 => {
                let (y, c) = max_pool2(&h);
                cache.pool = Some(c);
                h = y;
            }
            Resample::Up2 => h = upsample2(&h),
            Resample::None => {}
        }
        Ok((h, cache))
    }

    pub fn backward(&mut self, cache: BlockCache<T>, grad: Tensor<T>) -> Tensor<T> {
        let mut g = match self.spec.resample {
            Resample::Down2 => max_pool2_backward(cache.pool.as_ref().expect("pool cache"), &grad),
            Resample::Up2 => upsample2_backward(&grad),
            Resample::None => grad,
        };
        if let (Some(bn), Some(bc), Some(out)) = (self.norm.as_mut(), cache.norm, cache.relu_out.as_ref()) {
            g = relu_backward(out, &g);
            g = bn.backward(bc, &g);
        }
        match (&mut self.first, cache.first) {
            (FirstLayer::Conv(c), FirstCache::Conv(fc)) => c.backward(fc, &g),
            (FirstLayer::Vit(v), FirstCache::Vit(vc)) => v.backward(vc, &g),
            _ => unreachable!("cache does not match layer kind"),
        }
    }

    pub fn is_vit(&self) -> bool {
        matches!(self.first, FirstLayer::Vit(_))
    }

    fn cast<U: Real>(&self) -> LearningBlock<U> {
        LearningBlock {
            spec: self.spec,
            first: match &self.first {
                FirstLayer::Conv(c) => FirstLayer::Conv(c.cast()),
                FirstLayer::Vit(v) => FirstLayer::Vit(Box::new(v.cast())),
            },
            norm: self.norm.as_ref().map(|b| b.cast()),
        }
    }
}

impl<T: Real> Parameters<T> for LearningBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match &self.first {
            FirstLayer::Conv(c) => c.visit(&join(prefix, "conv"), f),
            FirstLayer::Vit(v) => v.visit(&join(prefix, "vit"), f),
        }
        if let Some(bn) = &self.norm {
            bn.visit(&join(prefix, "bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match &mut self.first {
            FirstLayer::Conv(c) => c.visit_mut(&join(prefix, "conv"), f),
            FirstLayer::Vit(v) => v.visit_mut(&join(prefix, "vit"), f),
        }
        if let Some(bn) = &mut self.norm {
            bn.visit_mut(&join(prefix, "bn"), f);
        }
    }
}

/// Realized autoencoder.
#[derive(Clone, Debug)]
pub struct Autoencoder<T = f32> {
    pub spec: AutoencoderSpec,
    pub encoder: Vec<LearningBlock<T>>,
    pub latent: LearningBlock<T>,
    pub decoder: Vec<LearningBlock<T>>,
    pub head: Conv2d<T>,
}

/// Activations kept for one backward pass.
#[derive(Clone, Debug)]
pub struct AutoencoderCache<T> {
    encoder: Vec<BlockCache<T>>,
    latent: BlockCache<T>,
    decoder: Vec<BlockCache<T>>,
    head: ConvCache<T>,
    output: Tensor<T>,
}

/// Builds the model with deterministic initialization from `seed`.
pub fn build_autoencoder(spec: &AutoencoderSpec, seed: u64) -> Result<Autoencoder<f32>> {
    Autoencoder::new(spec, seed)
}

impl<T: Real> Autoencoder<T> {
    pub fn new(spec: &AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.depth;
        let specs = spec.block_specs();
        let sizes = spec.block_input_sizes();
        let mut blocks = specs
            .iter()
            .zip(&sizes)
            .map(|(s, &hw)| LearningBlock::new(*s, &spec.vit, hw, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = blocks.split_off(d + 1);
        let latent = blocks.pop().expect("latent block");
        let head = Conv2d::new(spec.base_channels, 3, 3, &mut rng);
        Ok(Autoencoder {
            spec: *spec,
            encoder: blocks,
            latent,
            decoder,
            head,
        })
    }

    pub fn vit_layer_count(&self) -> usize {
        self.blocks().filter(|b| b.is_vit()).count()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &LearningBlock<T>> {
        self.encoder.iter().chain(std::iter::once(&self.latent)).chain(&self.decoder)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let PatchSpec { width, height } = self.spec.input_size;
        let [_, c, h, w] = x.shape();
        if c != 3 || h != height || w != width {
            return Err(Error::Dimension(format!(
                "model expects 3×{height}×{width} input, got {c}×{h}×{w}"
            )));
        }
        Ok(())
    }

    /// Encoder block outputs, outermost first.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(self.encoder.len());
        for b in &self.encoder {
            let input = outs.last().unwrap_or(x);
            outs.push(b.forward(input, false)?.0);
        }
        Ok(outs)
    }

    /// Decoder path from a latent-block output, with `skips` from [`Self::encode`].
    pub fn decode(&self, latent_out: &Tensor<T>, skips: &[Tensor<T>]) -> Result<Tensor<T>> {
        let d = self.spec.depth;
        let mut h = latent_out.clone();
        for (j, b) in self.decoder.iter().enumerate() {
            if self.spec.skip_connections {
                h.add_assign(&skips[d - 1 - j]);
            }
            h = b.forward(&h, false)?.0;
        }
        Ok(sigmoid(&self.head.infer(&h)))
    }

    /// Full forward pass; `train` selects batch statistics in normalization.
    pub fn forward_batch(&self, x: &Tensor<T>, train: bool) -> Result<(Tensor<T>, AutoencoderCache<T>)> {
        self.check_input(x)?;
        let d = self.spec.depth;
        let mut enc_caches = Vec::with_capacity(d);
        let mut enc_outs: Vec<Tensor<T>> = Vec::with_capacity(d);
        for b in &self.encoder {
            let input = enc_outs.last().unwrap_or(x);
            let (y, c) = b.forward(input, train)?;
            enc_caches.push(c);
            enc_outs.push(y);
        }
        let (mut h, latent) = self.latent.forward(enc_outs.last().expect("depth >= 1"), train)?;
        let mut dec_caches = Vec::with_capacity(d);
        for (j, b) in self.decoder.iter().enumerate() {
            if self.spec.skip_connections {
                h.add_assign(&enc_outs[d - 1 - j]);
            }
            let (y, c) = b.forward(&h, train)?;
            dec_caches.push(c);
            h = y;
        }
        let (logits, head) = self.head.forward(&h);
        let output = sigmoid(&logits);
        Ok((
            output.clone(),
            AutoencoderCache {
                encoder: enc_caches,
                latent,
                decoder: dec_caches,
                head,
                output,
            },
        ))
    }

    /// Inference-mode reconstruction.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_batch(x, false)?.0)
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, cache: AutoencoderCache<T>, grad_out: &Tensor<T>) {
        let d = self.spec.depth;
        let g = sigmoid_backward(&cache.output, grad_out);
        let mut g = self.head.backward(cache.head, &g);
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; d];
        for (j, (b, c)) in self.decoder.iter_mut().zip(cache.decoder).enumerate().rev() {
            g = b.backward(c, g);
            if self.spec.skip_connections {
                skip_grads[d - 1 - j] = Some(g.clone());
            }
        }
        g = self.latent.backward(cache.latent, g);
        for (i, (b, c)) in self.encoder.iter_mut().zip(cache.encoder).enumerate().rev() {
            if let Some(sg) = &skip_grads[i] {
                g.add_assign(sg);
            }
            g = b.backward(c, g);
        }
    }

    pub fn cast<U: Real>(&self) -> Autoencoder<U> {
        Autoencoder {
            spec: self.spec,
            encoder: self.encoder.iter().map(|b| b.cast()).collect(),
            latent: self.latent.cast(),
            decoder: self.decoder.iter().map(|b| b.cast()).collect(),
            head: self.head.cast(),
        }
    }
}

impl Autoencoder<f32> {
    /// Reconstructs a single patch.
    pub fn forward(&self, patch: &ImagePatch) -> Result<ImagePatch> {
        let x = patches_to_tensor(std::slice::from_ref(patch))?;
        let y = self.reconstruct(&x)?;
        let mut out = tensor_to_patches(&y).pop().expect("one patch");
        out.grid = patch.grid;
        Ok(out)
    }

    /// Reconstructs many patches, `batch` at a time.
    pub fn forward_many(&self, patches: &[ImagePatch], batch: usize) -> Result<Vec<ImagePatch>> {
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(batch.max(1)) {
            let y = self.reconstruct(&patches_to_tensor(chunk)?)?;
            out.extend(tensor_to_patches(&y).into_iter().zip(chunk).map(|(mut p, src)| {
                p.grid = src.grid;
                p
            }));
        }
        Ok(out)
    }
}

impl<T: Real> Parameters<T> for Autoencoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.latent.visit(&join(prefix, "latent"), f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("encoder.{i}")), f);
        }
        self.latent.visit_mut(&join(prefix, "latent"), f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
