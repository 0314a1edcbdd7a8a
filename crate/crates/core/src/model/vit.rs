//! Vision-transformer stage used as a drop-in first layer of a learning block.
//!
//! The feature map is cut into non-overlapping `p×p` tokens, embedded with
//! learned position embeddings, run through pre-norm self-attention blocks
//! and projected back to one channel vector per token. Each token's vector is
//! broadcast over its `p×p` footprint, so there is no class token and no
//! classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gelu, gelu_backward, join, LayerNorm, LayerNormCache, Linear, Mat, Param, Parameters};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MLP_RATIO: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViTLayerSpec {
    pub token_patch: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub transformer_depth: usize,
}

impl Default for ViTLayerSpec {
    fn default() -> Self {
        ViTLayerSpec {
            token_patch: 8,
            embed_dim: 128,
            heads: 4,
            transformer_depth: 2,
        }
    }
}

impl ViTLayerSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.token_patch == 0 || self.embed_dim == 0 || self.heads == 0 {
            return Err(Error::Config("ViT sizes must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "ViT embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if height % self.token_patch != 0 || width % self.token_patch != 0 {
            return Err(Error::Config(format!(
                "feature map {height}×{width} not divisible by ViT token patch {}",
                self.token_patch
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock<T> {
    pub heads: usize,
    pub ln1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    h1: Mat<T>,
    qkv: Mat<T>,
    probs: Vec<T>,
    attended: Mat<T>,
    ln2: LayerNormCache<T>,
    h2: Mat<T>,
    f1: Mat<T>,
    g1: Mat<T>,
}

impl<T: Real> TransformerBlock<T> {
    fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let hidden = dim * MLP_RATIO;
        TransformerBlock {
            heads,
            ln1: LayerNorm::new(dim),
            qkv: Linear::new(dim, 3 * dim, std, rng),
            proj: Linear::new(dim, dim, std, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, hidden, std, rng),
            fc2: Linear::new(hidden, dim, (1.0 / hidden as f64).sqrt(), rng),
        }
    }

    fn forward(&self, x: &Mat<T>, batch: usize, tokens: usize) -> (Mat<T>, BlockCache<T>) {
        let dim = x.cols;
        let dh = dim / self.heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let (h1, ln1) = self.ln1.forward(x);
        let qkv = self.qkv.forward(&h1);
        let mut attended = Mat::zeros(x.rows, dim);
        let mut probs = vec![T::zero(); batch * self.heads * tokens * tokens];
        let mut q = vec![T::zero(); tokens * dh];
        let mut k = vec![T::zero(); tokens * dh];
        let mut v = vec![T::zero(); tokens * dh];
        let mut o = vec![T::zero(); tokens * dh];
        for n in 0..batch {
            for h in 0..self.heads {
                gather_head(&qkv, n, tokens, h, dh, 0, &mut q);
                gather_head(&qkv, n, tokens, h, dh, dim, &mut k);
                gather_head(&qkv, n, tokens, h, dh, 2 * dim, &mut v);
                let a = &mut probs[(n * self.heads + h) * tokens * tokens..][..tokens * tokens];
                T::gemm(tokens, dh, tokens, &q, false, &k, true, T::zero(), a);
                for row in a.chunks_mut(tokens) {
                    let mut mx = T::neg_infinity();
                    for s in row.iter_mut() {
                        *s *= scale;
                        mx = mx.max(*s);
                    }
                    let mut sum = T::zero();
                    for s in row.iter_mut() {
                        *s = (*s - mx).exp();
                        sum += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= sum);
                }
                T::gemm(tokens, tokens, dh, a, false, &v, false, T::zero(), &mut o);
                for t in 0..tokens {
                    attended.row_mut(n * tokens + t)[h * dh..(h + 1) * dh]
                        .copy_from_slice(&o[t * dh..(t + 1) * dh]);
                }
            }
        }
        let mut x_mid = self.proj.forward(&attended);
        x_mid.add_assign(x);
        let (h2, ln2) = self.ln2.forward(&x_mid);
        let f1 = self.fc1.forward(&h2);
        let g1 = gelu(&f1);
        let mut out = self.fc2.forward(&g1);
        out.add_assign(&x_mid);
        (
            out,
            BlockCache {
                ln1,
                h1,
                qkv,
                probs,
                attended,
                ln2,
                h2,
                f1,
                g1,
            },
        )
    }

    fn backward(&mut self, c: &BlockCache<T>, grad: &Mat<T>, batch: usize, tokens: usize) -> Mat<T> {
        let dim = grad.cols;
        let dh = dim / self.heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());

        // MLP branch
        let dg1 = self.fc2.backward(&c.g1, grad);
        let df1 = gelu_backward(&c.f1, &dg1);
        let dh2 = self.fc1.backward(&c.h2, &df1);
        let mut dx_mid = self.ln2.backward(&c.ln2, &dh2);
        dx_mid.add_assign(grad);

        // attention branch
        let datt = self.proj.backward(&c.attended, &dx_mid);
        let mut dqkv = Mat::zeros(c.qkv.rows, c.qkv.cols);
        let mut q = vec![T::zero(); tokens * dh];
        let mut k = vec![T::zero(); tokens * dh];
        let mut v = vec![T::zero(); tokens * dh];
        let mut d_o = vec![T::zero(); tokens * dh];
        let mut da = vec![T::zero(); tokens * tokens];
        let mut dq = vec![T::zero(); tokens * dh];
        let mut dk = vec![T::zero(); tokens * dh];
        let mut dv = vec![T::zero(); tokens * dh];
        for n in 0..batch {
            for h in 0..self.heads {
                gather_head(&c.qkv, n, tokens, h, dh, 0, &mut q);
                gather_head(&c.qkv, n, tokens, h, dh, dim, &mut k);
                gather_head(&c.qkv, n, tokens, h, dh, 2 * dim, &mut v);
                gather_head(&datt, n, tokens, h, dh, 0, &mut d_o);
                let a = &c.probs[(n * self.heads + h) * tokens * tokens..][..tokens * tokens];
                T::gemm(tokens, dh, tokens, &d_o, false, &v, true, T::zero(), &mut da);
                T::gemm(tokens, tokens, dh, a, true, &d_o, false, T::zero(), &mut dv);
                // softmax backward, then fold in the 1/sqrt(dh) scale
                for (arow, drow) in a.chunks(tokens).zip(da.chunks_mut(tokens)) {
                    let dot: T = arow.iter().zip(drow.iter()).map(|(&p, &g)| p * g).sum();
                    for (d, &p) in drow.iter_mut().zip(arow) {
                        *d = p * (*d - dot) * scale;
                    }
                }
                T::gemm(tokens, tokens, dh, &da, false, &k, false, T::zero(), &mut dq);
                T::gemm(tokens, tokens, dh, &da, true, &q, false, T::zero(), &mut dk);
                scatter_head(&mut dqkv, n, tokens, h, dh, 0, &dq);
                scatter_head(&mut dqkv, n, tokens, h, dh, dim, &dk);
                scatter_head(&mut dqkv, n, tokens, h, dh, 2 * dim, &dv);
            }
        }
        let dh1 = self.qkv.backward(&c.h1, &dqkv);
        let mut dx = self.ln1.backward(&c.ln1, &dh1);
        dx.add_assign(&dx_mid);
        dx
    }

    fn cast<U: Real>(&self) -> TransformerBlock<U> {
        TransformerBlock {
            heads: self.heads,
            ln1: self.ln1.cast(),
            qkv: self.qkv.cast(),
            proj: self.proj.cast(),
            ln2: self.ln2.cast(),
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
        }
    }
}

fn gather_head<T: Real>(m: &Mat<T>, n: usize, tokens: usize, h: usize, dh: usize, offset: usize, out: &mut [T]) {
    for t in 0..tokens {
        let start = offset + h * dh;
        out[t * dh..(t + 1) * dh].copy_from_slice(&m.row(n * tokens + t)[start..start + dh]);
    }
}

fn scatter_head<T: Real>(m: &mut Mat<T>, n: usize, tokens: usize, h: usize, dh: usize, offset: usize, src: &[T]) {
    for t in 0..tokens {
        let start = offset + h * dh;
        m.row_mut(n * tokens + t)[start..start + dh].copy_from_slice(&src[t * dh..(t + 1) * dh]);
    }
}

impl<T: Real> Parameters<T> for TransformerBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Tokenize → transformer → per-token projection, for a fixed feature-map size.
#[derive(Clone, Debug)]
pub struct VitLayer<T> {
    pub spec: ViTLayerSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub embed: Linear<T>,
    /// `[tokens, embed_dim]`
    pub pos: Param<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub norm: LayerNorm<T>,
    pub project: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct VitCache<T> {
    batch: usize,
    tokens: Mat<T>,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
    normed: Mat<T>,
}

impl<T: Real> VitLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        spec: ViTLayerSpec,
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate(height, width)?;
        let p = spec.token_patch;
        let token_dim = in_channels * p * p;
        let n_tokens = (height / p) * (width / p);
        let d = spec.embed_dim;
        Ok(VitLayer {
            spec,
            in_channels,
            out_channels,
            height,
            width,
            embed: Linear::new(token_dim, d, (1.0 / token_dim as f64).sqrt(), rng),
            pos: Param::normal(vec![n_tokens, d], 0.02, rng),
            blocks: (0..spec.transformer_depth)
                .map(|_| TransformerBlock::new(d, spec.heads, rng))
                .collect(),
            norm: LayerNorm::new(d),
            project: Linear::new(d, out_channels, (1.0 / d as f64).sqrt(), rng),
        })
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.height / self.spec.token_patch, self.width / self.spec.token_patch)
    }

    pub fn n_tokens(&self) -> usize {
        let (gh, gw) = self.token_grid();
        gh * gw
    }

    /// `[N, C, H, W]` → `[N·T, C·p·p]`, tokens in row-major grid order.
    pub fn tokenize(&self, x: &Tensor<T>) -> Mat<T> {
        let [n, c, h, w] = x.shape();
        let p = self.spec.token_patch;
        let (gh, gw) = self.token_grid();
        let t_count = gh * gw;
        let mut m = Mat::zeros(n * t_count, c * p * p);
        for i in 0..n {
            let src = x.item(i);
            for ty in 0..gh {
                for tx in 0..gw {
                    let row = m.row_mut(i * t_count + ty * gw + tx);
                    for ch in 0..c {
                        for dy in 0..p {
                            let s = ch * h * w + (ty * p + dy) * w + tx * p;
                            row[(ch * p + dy) * p..(ch * p + dy + 1) * p].copy_from_slice(&src[s..s + p]);
                        }
                    }
                }
            }
        }
        m
    }

    fn untokenize_backward(&self, grad: &Tensor<T>) -> Mat<T> {
        let [n, c, h, w] = grad.shape();
        let p = self.spec.token_patch;
        let (gh, gw) = self.token_grid();
        let t_count = gh * gw;
        let mut m = Mat::zeros(n * t_count, c);
        for i in 0..n {
            let g = grad.item(i);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        m.data[(i * t_count + (y / p) * gw + x / p) * c + ch] += g[ch * h * w + y * w + x];
                    }
                }
            }
        }
        m
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, VitCache<T>)> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels || h != self.height || w != self.width {
            return Err(Error::Dimension(format!(
                "ViT layer built for {}×{}×{}, got {c}×{h}×{w}",
                self.in_channels, self.height, self.width
            )));
        }
        let t_count = self.n_tokens();
        let tokens = self.tokenize(x);
        let mut z = self.embed.forward(&tokens);
        for i in 0..n {
            for t in 0..t_count {
                for (a, &b) in z.row_mut(i * t_count + t).iter_mut().zip(&self.pos.value[t * self.spec.embed_dim..]) {
                    *a += b;
                }
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&z, n, t_count);
            caches.push(cache);
            z = out;
        }
        let (normed, norm) = self.norm.forward(&z);
        let proj = self.project.forward(&normed);

        let p = self.spec.token_patch;
        let (_, gw) = self.token_grid();
        let co = self.out_channels;
        let mut out = Tensor::zeros([n, co, h, w]);
        for i in 0..n {
            let dst = out.item_mut(i);
            for ch in 0..co {
                for y in 0..h {
                    for xx in 0..w {
                        dst[ch * h * w + y * w + xx] = proj.data[(i * t_count + (y / p) * gw + xx / p) * co + ch];
                    }
                }
            }
        }
        Ok((
            out,
            VitCache {
                batch: n,
                tokens,
                blocks: caches,
                norm,
                normed,
            },
        ))
    }

    pub fn backward(&mut self, cache: VitCache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let n = cache.batch;
        let t_count = self.n_tokens();
        let dproj = self.untokenize_backward(grad);
        let dnormed = self.project.backward(&cache.normed, &dproj);
        let mut dz = self.norm.backward(&cache.norm, &dnormed);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            dz = b.backward(c, &dz, n, t_count);
        }
        let d = self.spec.embed_dim;
        for i in 0..n {
            for t in 0..t_count {
                for (g, &v) in self.pos.grad[t * d..(t + 1) * d].iter_mut().zip(dz.row(i * t_count + t)) {
                    *g += v;
                }
            }
        }
        let dtokens = self.embed.backward(&cache.tokens, &dz);

        let p = self.spec.token_patch;
        let (gh, gw) = self.token_grid();
        let (c, h, w) = (self.in_channels, self.height, self.width);
        let mut dx = Tensor::zeros([n, c, h, w]);
        for i in 0..n {
            let dst = dx.item_mut(i);
            for ty in 0..gh {
                for tx in 0..gw {
                    let row = dtokens.row(i * t_count + ty * gw + tx);
                    for ch in 0..c {
                        for dy in 0..p {
                            let s = ch * h * w + (ty * p + dy) * w + tx * p;
                            dst[s..s + p].copy_from_slice(&row[(ch * p + dy) * p..(ch * p + dy + 1) * p]);
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn cast<U: Real>(&self) -> VitLayer<U> {
        VitLayer {
            spec: self.spec,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            height: self.height,
            width: self.width,
            embed: self.embed.cast(),
            pos: self.pos.cast(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
            norm: self.norm.cast(),
            project: self.project.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for VitLayer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.embed.visit(&join(prefix, "embed"), f);
        f(&join(prefix, "pos"), &self.pos);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit(&join(prefix, "norm"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.embed.visit_mut(&join(prefix, "embed"), f);
        f(&join(prefix, "pos"), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}
