//! Compact residual classifier for cropped localizations.
//!
//! stem conv → BN → ReLU → residual block → max-pool → residual block (2×
//! width, 1×1 projection shortcut) → max-pool → global average pool → linear
//! → softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    join, max_pool2, max_pool2_backward, relu, relu_backward, BatchNorm2d, BatchNormCache, Conv2d, ConvCache, Linear,
    Mat, Param, Parameters, PoolCache,
};
use super::real::Real;
use super::tensor::Tensor;
use super::patches_to_tensor;
use crate::error::{Error, Result};
use crate::imaging::{CroppedLocalization, ImagePatch, Raster};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub n_classes: usize,
    /// Side of the square input, divisible by 4.
    pub input_size: usize,
    pub width: usize,
    pub labels: Vec<String>,
}

impl ClassifierSpec {
    pub fn new(labels: Vec<String>, input_size: usize) -> Self {
        ClassifierSpec {
            n_classes: labels.len(),
            input_size,
            width: 8,
            labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("classifier needs >= 2 classes, got {}", self.n_classes)));
        }
        if self.labels.len() != self.n_classes {
            return Err(Error::Config("label count differs from n_classes".into()));
        }
        if self.input_size < 4 || self.input_size % 4 != 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "classifier input size {} must be a positive multiple of 4",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ResBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub proj: Option<Conv2d<T>>,
}

#[derive(Clone, Debug)]
struct ResCache<T> {
    c1: ConvCache<T>,
    b1: BatchNormCache<T>,
    r1: Tensor<T>,
    c2: ConvCache<T>,
    b2: BatchNormCache<T>,
    proj: Option<ConvCache<T>>,
    out: Tensor<T>,
}

impl<T: Real> ResBlock<T> {
    fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: Conv2d::new(cin, cout, 3, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, rng),
            bn2: BatchNorm2d::new(cout),
            proj: (cin != cout).then(|| Conv2d::new(cin, cout, 1, rng)),
        }
    }

    fn forward(&self, x: &Tensor<T>, train: bool) -> (Tensor<T>, ResCache<T>) {
        let (h, c1) = self.conv1.forward(x);
        let (h, b1) = self.bn1.forward(&h, train);
        let r1 = relu(&h);
        let (h, c2) = self.conv2.forward(&r1);
        let (mut h, b2) = self.bn2.forward(&h, train);
        let proj = match &self.proj {
            Some(p) => {
                let (s, pc) = p.forward(x);
                h.add_assign(&s);
                Some(pc)
            }
            None => {
                h.add_assign(x);
                None
            }
        };
        let out = relu(&h);
        (
            out.clone(),
            ResCache {
                c1,
                b1,
                r1,
                c2,
                b2,
                proj,
                out,
            },
        )
    }

    fn backward(&mut self, c: ResCache<T>, grad: &Tensor<T>) -> Tensor<T> {
        let g = relu_backward(&c.out, grad);
        let mut dx = match (&mut self.proj, c.proj) {
            (Some(p), Some(pc)) => p.backward(pc, &g),
            _ => g.clone(),
        };
        let h = self.bn2.backward(c.b2, &g);
        let h = self.conv2.backward(c.c2, &h);
        let h = relu_backward(&c.r1, &h);
        let h = self.bn1.backward(c.b1, &h);
        dx.add_assign(&self.conv1.backward(c.c1, &h));
        dx
    }

    fn cast<U: Real>(&self) -> ResBlock<U> {
        ResBlock {
            conv1: self.conv1.cast(),
            bn1: self.bn1.cast(),
            conv2: self.conv2.cast(),
            bn2: self.bn2.cast(),
            proj: self.proj.as_ref().map(|p| p.cast()),
        }
    }
}

impl<T: Real> Parameters<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some(p) = &self.proj {
            p.visit(&join(prefix, "proj"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_mut(&join(prefix, "proj"), f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier<T = f32> {
    pub spec: ClassifierSpec,
    pub stem: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub res1: ResBlock<T>,
    pub res2: ResBlock<T>,
    pub fc: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct ClassifierCache<T> {
    stem: ConvCache<T>,
    stem_bn: BatchNormCache<T>,
    stem_out: Tensor<T>,
    res1: ResCache<T>,
    pool1: PoolCache,
    res2: ResCache<T>,
    pool2: PoolCache,
    pooled_shape: [usize; 4],
    features: Mat<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrediction {
    pub class: usize,
    pub label: String,
    pub score: f64,
    pub distribution: Vec<f64>,
}

impl ClassPrediction {
    pub fn from_distribution(distribution: Vec<f64>, labels: &[String]) -> Self {
        let (class, score) = distribution
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        ClassPrediction {
            class,
            label: labels.get(class).cloned().unwrap_or_else(|| class.to_string()),
            score,
            distribution,
        }
    }
}

pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Classifier<f32>> {
    Classifier::new(spec, seed)
}

impl<T: Real> Classifier<T> {
    pub fn new(spec: &ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = spec.width;
        Ok(Classifier {
            spec: spec.clone(),
            stem: Conv2d::new(3, w, 3, &mut rng),
            stem_bn: BatchNorm2d::new(w),
            res1: ResBlock::new(w, w, &mut rng),
            res2: ResBlock::new(w, 2 * w, &mut rng),
            // small head weights keep the untrained distribution near uniform
            fc: Linear::new(2 * w, spec.n_classes, 0.01, &mut rng),
        })
    }

    /// Class logits for an `[N, 3, S, S]` batch.
    pub fn logits(&self, x: &Tensor<T>, train: bool) -> Result<(Mat<T>, ClassifierCache<T>)> {
        let s = self.spec.input_size;
        let [_, c, h, w] = x.shape();
        if c != 3 || h != s || w != s {
            return Err(Error::Dimension(format!("classifier expects 3×{s}×{s}, got {c}×{h}×{w}")));
        }
        let (hdn, stem) = self.stem.forward(x);
        let (hdn, stem_bn) = self.stem_bn.forward(&hdn, train);
        let stem_out = relu(&hdn);
        let (hdn, res1) = self.res1.forward(&stem_out, train);
        let (hdn, pool1) = max_pool2(&hdn);
        let (hdn, res2) = self.res2.forward(&hdn, train);
        let (hdn, pool2) = max_pool2(&hdn);
        let pooled_shape = hdn.shape();
        let [n, ch, ph, pw] = pooled_shape;
        let area = T::from_usize(ph * pw).unwrap();
        let mut features = Mat::zeros(n, ch);
        for i in 0..n {
            let item = hdn.item(i);
            for k in 0..ch {
                features.data[i * ch + k] = item[k * ph * pw..(k + 1) * ph * pw].iter().copied().sum::<T>() / area;
            }
        }
        let logits = self.fc.forward(&features);
        Ok((
            logits,
            ClassifierCache {
                stem,
                stem_bn,
                stem_out,
                res1,
                pool1,
                res2,
                pool2,
                pooled_shape,
                features,
            },
        ))
    }

    pub fn backward(&mut self, cache: ClassifierCache<T>, dlogits: &Mat<T>) {
        let df = self.fc.backward(&cache.features, dlogits);
        let [n, ch, ph, pw] = cache.pooled_shape;
        let area = T::from_usize(ph * pw).unwrap();
        let mut g = Tensor::zeros(cache.pooled_shape);
        for i in 0..n {
            let item = g.item_mut(i);
            for k in 0..ch {
                let v = df.data[i * ch + k] / area;
                item[k * ph * pw..(k + 1) * ph * pw].iter_mut().for_each(|x| *x = v);
            }
        }
        let g = max_pool2_backward(&cache.pool2, &g);
        let g = self.res2.backward(cache.res2, &g);
        let g = max_pool2_backward(&cache.pool1, &g);
        let g = self.res1.backward(cache.res1, &g);
        let g = relu_backward(&cache.stem_out, &g);
        let g = self.stem_bn.backward(cache.stem_bn, &g);
        self.stem.backward(cache.stem, &g);
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        Classifier {
            spec: self.spec.clone(),
            stem: self.stem.cast(),
            stem_bn: self.stem_bn.cast(),
            res1: self.res1.cast(),
            res2: self.res2.cast(),
            fc: self.fc.cast(),
        }
    }
}

/// Row-wise softmax in `f64`.
pub fn softmax<T: Real>(logits: &Mat<T>) -> Vec<Vec<f64>> {
    (0..logits.rows)
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_f64_lossy()).collect();
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Aspect-preserving resize so the longer side equals `size`, centred on a
/// black `size×size` canvas.
pub fn fit_to_square(raster: &Raster, size: usize) -> Raster {
    let (w, h) = (raster.width(), raster.height());
    let scale = size as f64 / w.max(h) as f64;
    let nw = ((w as f64 * scale).round() as usize).clamp(1, size);
    let nh = ((h as f64 * scale).round() as usize).clamp(1, size);
    let resized = raster.resize_bilinear(nw, nh);
    let mut canvas = Raster::filled(size, size, [0.0; 3]);
    canvas.paste(&resized, (size - nw) / 2, (size - nh) / 2);
    canvas
}

impl Classifier<f32> {
    pub fn predict_batch(&self, crops: &[Raster]) -> Result<Vec<ClassPrediction>> {
        if crops.is_empty() {
            return Ok(Vec::new());
        }
        let patches: Vec<ImagePatch> = crops
            .iter()
            .map(|r| ImagePatch::new(fit_to_square(r, self.spec.input_size)))
            .collect();
        let x = patches_to_tensor(&patches)?;
        let (logits, _) = self.logits(&x, false)?;
        Ok(softmax(&logits)
            .into_iter()
            .map(|d| ClassPrediction::from_distribution(d, &self.spec.labels))
            .collect())
    }
}

/// Classifies one crop.
pub fn classify(model: &Classifier<f32>, crop: &CroppedLocalization) -> Result<ClassPrediction> {
    Ok(model
        .predict_batch(std::slice::from_ref(&crop.raster))?
        .pop()
        .expect("one prediction"))
}

impl<T: Real> Parameters<T> for Classifier<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        self.res1.visit(&join(prefix, "res1"), f);
        self.res2.visit(&join(prefix, "res2"), f);
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem_bn"), f);
        self.res1.visit_mut(&join(prefix, "res1"), f);
        self.res2.visit_mut(&join(prefix, "res2"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}
