//! Differentiable building blocks with hand-written backward passes.
//!
//! Forward passes take `&self` and return the activations needed by the
//! matching backward pass, so a realized model can be shared across threads
//! for inference. Backward passes accumulate into each [`Param::grad`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;

/// Learnable parameter or persistent buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Buffers (batch-norm running statistics) are saved but never optimized.
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Param {
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![v; len])
    }

    pub fn normal<R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("non-negative std");
        let value = (0..len).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
        Self::new(shape, value)
    }

    pub fn buffer(shape: Vec<usize>, v: T) -> Self {
        let mut p = Self::filled(shape, v);
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

    pub fn cast<U: Real>(&self) -> Param<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        Param {
            shape: self.shape.clone(),
            value: conv(&self.value),
            grad: conv(&self.grad),
            trainable: self.trainable,
        }
    }
}

/// Walks named parameters in a fixed, deterministic order.
pub trait Parameters<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1 2-D convolution with symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `[out, in·k·k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialization.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding: kernel / 2,
            weight: Param::normal(vec![out_channels, fan_in], std, rng),
            bias: Param::filled(vec![out_channels], T::zero()),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            h + 2 * self.padding + 1 - self.kernel,
            w + 2 * self.padding + 1 - self.kernel,
        )
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let k = self.kernel;
        let pad = self.padding as isize;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    let dx = kx as isize - pad;
                    // valid output columns: 0 <= ox + dx < w
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize || x0 >= x1 {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        out_row[..x0].iter_mut().for_each(|v| *v = T::zero());
                        out_row[x1..].iter_mut().for_each(|v| *v = T::zero());
                        let s0 = (x0 as isize + dx) as usize;
                        out_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx_out: &mut [T]) {
        let k = self.kernel;
        let pad = self.padding as isize;
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx_out[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    let dx = kx as isize - pad;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let s0 = (x0 as isize + dx) as usize;
                        let dst = &mut plane[iy as usize * w + s0..iy as usize * w + s0 + (x1 - x0)];
                        for (d, &s) in dst.iter_mut().zip(&src[oy * ow + x0..oy * ow + x1]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, ConvCache<T>) {
        let out = self.infer(x);
        (out, ConvCache { input: x.clone() })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let ikk = self.in_channels * self.kernel * self.kernel;
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        let mut cols = vec![T::zero(); ikk * ohw];
        for i in 0..n {
            let dst = out.item_mut(i);
            if self.kernel == 1 && self.padding == 0 {
                T::gemm(self.out_channels, ikk, ohw, &self.weight.value, false, x.item(i), false, T::zero(), dst);
            } else {
                self.im2col(x.item(i), h, w, &mut cols);
                T::gemm(self.out_channels, ikk, ohw, &self.weight.value, false, &cols, false, T::zero(), dst);
            }
            for (o, &b) in self.bias.value.iter().enumerate() {
                dst[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    pub fn backward(&mut self, cache: ConvCache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let x = cache.input;
        let [n, _, h, w] = x.shape();
        let (oh, ow) = self.out_hw(h, w);
        let ohw = oh * ow;
        let ikk = self.in_channels * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); ikk * ohw];
        let mut dcols = vec![T::zero(); ikk * ohw];
        let pointwise = self.kernel == 1 && self.padding == 0;
        for i in 0..n {
            let g = grad.item(i);
            let col_src: &[T] = if pointwise {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut cols);
                &cols
            };
            T::gemm(self.out_channels, ohw, ikk, g, false, col_src, true, T::one(), &mut self.weight.grad);
            for o in 0..self.out_channels {
                self.bias.grad[o] += g[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
            }
            if pointwise {
                T::gemm(ikk, self.out_channels, ohw, &self.weight.value, true, g, false, T::zero(), dx.item_mut(i));
            } else {
                T::gemm(ikk, self.out_channels, ohw, &self.weight.value, true, g, false, T::zero(), &mut dcols);
                self.col2im(&dcols, h, w, dx.item_mut(i));
            }
        }
        dx
    }

    pub fn cast<U: Real>(&self) -> Conv2d<U> {
        Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            padding: self.padding,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    train: bool,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var_unbiased: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
            running_mean: Param::buffer(vec![channels], T::zero()),
            running_var: Param::buffer(vec![channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training mode normalizes with batch statistics, inference mode with
    /// the running estimates.
    pub fn forward(&self, x: &Tensor<T>, train: bool) -> (Tensor<T>, BatchNormCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batch-norm channel mismatch");
        let hw = h * w;
        let count = (n * hw) as f64;
        let eps = T::from_f64_lossy(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut var_unbiased = vec![T::zero(); c];
        if train {
            for ch in 0..c {
                let mut s = 0.0f64;
                for i in 0..n {
                    s += x.item(i)[ch * hw..(ch + 1) * hw].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
                let m = s / count;
                let mut ss = 0.0f64;
                for i in 0..n {
                    ss += x.item(i)[ch * hw..(ch + 1) * hw]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64_lossy() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = T::from_f64_lossy(m);
                var[ch] = T::from_f64_lossy(ss / count);
                var_unbiased[ch] = T::from_f64_lossy(if count > 1.0 { ss / (count - 1.0) } else { 0.0 });
            }
        } else {
            mean.copy_from_slice(&self.running_mean.value);
            var.copy_from_slice(&self.running_var.value);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            let src = x.item(i);
            let xh = xhat.item_mut(i);
            for ch in 0..c {
                let (m, s) = (mean[ch], inv_std[ch]);
                for j in ch * hw..(ch + 1) * hw {
                    xh[j] = (src[j] - m) * s;
                }
            }
            let dst = y.item_mut(i);
            let xh = xhat.item(i);
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for j in ch * hw..(ch + 1) * hw {
                    dst[j] = g * xh[j] + b;
                }
            }
        }
        (
            y,
            BatchNormCache {
                train,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: var_unbiased,
            },
        )
    }

    /// Also folds the batch statistics into the running estimates.
    pub fn backward(&mut self, cache: BatchNormCache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = grad.shape();
        let hw = h * w;
        let count = T::from_usize((n * hw).max(1)).unwrap();
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for i in 0..n {
                let g = &grad.item(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.item(i)[ch * hw..(ch + 1) * hw];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_g += gv;
                    sum_gx += gv * xv;
                }
            }
            self.gamma.grad[ch] += sum_gx;
            self.beta.grad[ch] += sum_g;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for i in 0..n {
                let g = &grad.item(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.item(i)[ch * hw..(ch + 1) * hw];
                let d = &mut dx.item_mut(i)[ch * hw..(ch + 1) * hw];
                if cache.train {
                    for j in 0..hw {
                        d[j] = scale * (g[j] - sum_g / count - xh[j] * sum_gx / count);
                    }
                } else {
                    for j in 0..hw {
                        d[j] = scale * g[j];
                    }
                }
            }
        }
        if cache.train {
            let mom = T::from_f64_lossy(self.momentum);
            for ch in 0..c {
                let rm = &mut self.running_mean.value[ch];
                *rm = (T::one() - mom) * *rm + mom * cache.batch_mean[ch];
                let rv = &mut self.running_var.value[ch];
                *rv = (T::one() - mom) * *rv + mom * cache.batch_var_unbiased[ch];
            }
        }
        dx
    }

    pub fn cast<U: Real>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            channels: self.channels,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<T: Real> Parameters<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// Parameter-free spatial ops

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
    y
}

/// `output` is the forward result of [`relu`].
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
    y
}

pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = grad.clone();
    for (d, &y) in dx.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (T::one() - y);
    }
    dx
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: [usize; 4],
    argmax: Vec<u32>,
}

/// 2×2 max pooling, stride 2. Ties resolve to the first element in raster order.
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, PoolCache) {
    let [n, c, h, w] = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "max-pool needs even spatial size");
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for i in 0..n {
        let src = x.item(i);
        let dst = out.item_mut(i);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[ch * oh * ow + oy * ow + ox] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    (
        out,
        PoolCache {
            input_shape: x.shape(),
            argmax,
        },
    )
}

pub fn max_pool2_backward<T: Real>(cache: &PoolCache, grad: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(cache.input_shape);
    let per_item = grad.item_len();
    for i in 0..grad.batch() {
        let g = grad.item(i);
        let d = dx.item_mut(i);
        for (j, &gv) in g.iter().enumerate() {
            d[cache.argmax[i * per_item + j] as usize] += gv;
        }
    }
    dx
}

/// 2× nearest-neighbour upsampling.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for i in 0..n {
        let src = x.item(i);
        let dst = out.item_mut(i);
        for ch in 0..c {
            for y in 0..oh {
                let srow = &src[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                let drow = &mut dst[ch * oh * ow + y * ow..ch * oh * ow + (y + 1) * ow];
                for (x2, d) in drow.iter_mut().enumerate() {
                    *d = srow[x2 / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = grad.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for i in 0..n {
        let g = grad.item(i);
        let d = dx.item_mut(i);
        for ch in 0..c {
            for y in 0..oh {
                for x2 in 0..ow {
                    d[ch * h * w + (y / 2) * w + x2 / 2] += g[ch * oh * ow + y * ow + x2];
                }
            }
        }
    }
    dx
}

/// Resampling step closing a learning block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resample {
    Down2,
    Up2,
    None,
}

// ---------------------------------------------------------------------------
// Row-major matrix ops used by the transformer layers

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Affine map applied to every row: `y = x·W + b`, `W` is `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, std: f64, rng: &mut R) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: Param::normal(vec![in_dim, out_dim], std, rng),
            bias: Param::filled(vec![out_dim], T::zero()),
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> Mat<T> {
        assert_eq!(x.cols, self.in_dim, "linear input width mismatch");
        let mut y = Mat::zeros(x.rows, self.out_dim);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value);
        }
        T::gemm(x.rows, self.in_dim, self.out_dim, &x.data, false, &self.weight.value, false, T::one(), &mut y.data);
        y
    }

    /// `input` is the matrix that was fed to [`Linear::forward`].
    pub fn backward(&mut self, input: &Mat<T>, grad: &Mat<T>) -> Mat<T> {
        T::gemm(self.in_dim, input.rows, self.out_dim, &input.data, true, &grad.data, false, T::one(), &mut self.weight.grad);
        for r in 0..grad.rows {
            for (b, &g) in self.bias.grad.iter_mut().zip(grad.row(r)) {
                *b += g;
            }
        }
        let mut dx = Mat::zeros(input.rows, self.in_dim);
        T::gemm(grad.rows, self.out_dim, self.in_dim, &grad.data, false, &self.weight.value, true, T::zero(), &mut dx.data);
        dx
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Real> Parameters<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-row layer normalization.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub dim: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            dim,
            gamma: Param::filled(vec![dim], T::one()),
            beta: Param::filled(vec![dim], T::zero()),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Mat<T>) -> (Mat<T>, LayerNormCache<T>) {
        let d = T::from_usize(self.dim).unwrap();
        let eps = T::from_f64_lossy(self.eps);
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
            let s = T::one() / (var + eps).sqrt();
            inv_std.push(s);
            let xh = xhat.row_mut(r);
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            let xh = xhat.row(r);
            for ((o, &v), (&g, &b)) in y
                .row_mut(r)
                .iter_mut()
                .zip(xh)
                .zip(self.gamma.value.iter().zip(&self.beta.value))
            {
                *o = g * v + b;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, grad: &Mat<T>) -> Mat<T> {
        let d = T::from_usize(self.dim).unwrap();
        let mut dx = Mat::zeros(grad.rows, grad.cols);
        for r in 0..grad.rows {
            let g = grad.row(r);
            let xh = cache.xhat.row(r);
            let mut sum_dxh = T::zero();
            let mut sum_dxh_xh = T::zero();
            for j in 0..self.dim {
                self.gamma.grad[j] += g[j] * xh[j];
                self.beta.grad[j] += g[j];
                let dxh = g[j] * self.gamma.value[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[j];
            }
            let s = cache.inv_std[r];
            let out = dx.row_mut(r);
            for j in 0..self.dim {
                let dxh = g[j] * self.gamma.value[j];
                out[j] = s * (dxh - sum_dxh / d - xh[j] * sum_dxh_xh / d);
            }
        }
        dx
    }

    pub fn cast<U: Real>(&self) -> LayerNorm<U> {
        LayerNorm {
            dim: self.dim,
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            eps: self.eps,
        }
    }
}

impl<T: Real> Parameters<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: &Mat<T>) -> Mat<T> {
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        let u = c * (*v + k * *v * *v * *v);
        *v = half * *v * (T::one() + u.tanh());
    }
    y
}

pub fn gelu_backward<T: Real>(input: &Mat<T>, grad: &Mat<T>) -> Mat<T> {
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(0.044715);
    let three = T::from_f64_lossy(3.0);
    let half = T::from_f64_lossy(0.5);
    let mut dx = grad.clone();
    for (d, &x) in dx.data.iter_mut().zip(&input.data) {
        let u = c * (x + k * x * x * x);
        let t = u.tanh();
        let du = c * (T::one() + three * k * x * x);
        *d *= half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    }
    dx
}
