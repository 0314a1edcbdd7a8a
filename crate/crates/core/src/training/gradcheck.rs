//! Central finite-difference verification of hand-written backward passes.
//! Everything runs in `f64` on a cast copy of the model.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::ImagePatch;
use crate::model::layers::{Linear, Mat};
use crate::model::{patches_to_tensor, softmax, Autoencoder, Classifier, Param, Parameters, Tensor, VitLayer};

use super::loss::{cross_entropy_loss, mse_grad, mse_loss, one_hot};

/// Scalar loss of fixed inputs as a function of the model parameters.
pub trait Objective: Parameters<f64> {
    fn loss(&self) -> f64;
    /// Adds d(loss)/d(param) into every `Param::grad`.
    fn accumulate_gradients(&mut self);
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: Option<String>,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares analytic and numeric gradients on `coords` sampled trainable
/// coordinates. Every trainable tensor contributes at least one coordinate.
/// `epsilon` is clamped into `[1e-6, 1e-3]`.
pub fn gradient_check_objective<O: Objective>(obj: &mut O, coords: usize, epsilon: f64, seed: u64) -> GradCheckReport {
    let eps = epsilon.clamp(1e-6, 1e-3);
    obj.zero_grad();
    obj.accumulate_gradients();

    let mut params: Vec<(String, usize, Vec<f64>)> = Vec::new();
    obj.visit("", &mut |name, p| {
        if p.trainable {
            params.push((name.to_string(), p.len(), p.grad.clone()));
        }
    });
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, (_, len, _)| {
            let o = *acc;
            *acc += len;
            Some(o)
        })
        .collect();
    let total: usize = params.iter().map(|p| p.1).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = params
        .iter()
        .zip(&offsets)
        .filter(|((_, len, _), _)| *len > 0)
        .map(|((_, len, _), &o)| o + rng.random_range(0..*len))
        .collect();
    let extra = coords.saturating_sub(chosen.len()).min(total);
    chosen.extend(sample(&mut rng, total, extra).into_iter());
    chosen.sort_unstable();
    chosen.dedup();

    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for flat in chosen {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[pi];
        let name = params[pi].0.clone();
        let perturb = |obj: &mut O, delta: f64| {
            obj.visit_mut("", &mut |n, p: &mut Param<f64>| {
                if n == name {
                    p.value[j] += delta;
                }
            });
        };
        perturb(obj, eps);
        let plus = obj.loss();
        perturb(obj, -2.0 * eps);
        let minus = obj.loss();
        perturb(obj, eps);
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(params[pi].2[j], numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some(format!("{name}[{j}]"));
        }
    }
    report
}

/// Reconstruction MSE of a fixed batch in training mode.
pub struct AutoencoderObjective {
    pub model: Autoencoder<f64>,
    pub input: Tensor<f64>,
}

impl Parameters<f64> for AutoencoderObjective {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.model.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.model.visit_mut(prefix, f)
    }
}

impl Objective for AutoencoderObjective {
    fn loss(&self) -> f64 {
        let (y, _) = self.model.forward_batch(&self.input, true).expect("shape checked at construction");
        mse_loss(y.data(), self.input.data()).expect("equal lengths")
    }

    fn accumulate_gradients(&mut self) {
        let (y, cache) = self.model.forward_batch(&self.input, true).expect("shape checked at construction");
        let g = Tensor::from_vec(y.shape(), mse_grad(y.data(), self.input.data()));
        self.model.backward(cache, &g);
    }
}

/// `½‖f(x) − target‖²` through a single ViT layer.
pub struct VitObjective {
    pub layer: VitLayer<f64>,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
}

impl VitObjective {
    /// Random input and target for `layer`.
    pub fn random(layer: VitLayer<f64>, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_t = |c: usize| {
            let shape = [batch, c, layer.height, layer.width];
            let len = shape.iter().product();
            Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let input = rand_t(layer.in_channels);
        let target = rand_t(layer.out_channels);
        VitObjective { layer, input, target }
    }
}

impl Parameters<f64> for VitObjective {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.layer.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.layer.visit_mut(prefix, f)
    }
}

impl Objective for VitObjective {
    fn loss(&self) -> f64 {
        let (y, _) = self.layer.forward(&self.input).expect("shape checked at construction");
        0.5 * y.data().iter().zip(self.target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    fn accumulate_gradients(&mut self) {
        let (y, cache) = self.layer.forward(&self.input).expect("shape checked at construction");
        let g: Vec<f64> = y.data().iter().zip(self.target.data()).map(|(a, b)| a - b).collect();
        self.layer.backward(cache, &Tensor::from_vec(y.shape(), g));
    }
}

/// Mean cross-entropy of a labelled batch in training mode.
pub struct ClassifierObjective {
    pub model: Classifier<f64>,
    pub input: Tensor<f64>,
    pub classes: Vec<usize>,
}

impl Parameters<f64> for ClassifierObjective {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.model.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.model.visit_mut(prefix, f)
    }
}

impl Objective for ClassifierObjective {
    fn loss(&self) -> f64 {
        let (logits, _) = self.model.logits(&self.input, true).expect("shape checked at construction");
        let k = self.model.spec.n_classes;
        let probs = softmax(&logits);
        let sum: f64 = probs
            .iter()
            .zip(&self.classes)
            .map(|(p, &c)| cross_entropy_loss(p, &one_hot(c, k)).expect("matching lengths"))
            .sum();
        sum / self.classes.len() as f64
    }

    fn accumulate_gradients(&mut self) {
        let (logits, cache) = self.model.logits(&self.input, true).expect("shape checked at construction");
        let k = self.model.spec.n_classes;
        let n = self.classes.len() as f64;
        let mut d = Mat::zeros(logits.rows, k);
        for (r, p) in softmax(&logits).iter().enumerate() {
            for j in 0..k {
                let y = if j == self.classes[r] { 1.0 } else { 0.0 };
                d.data[r * k + j] = (p[j] - y) / n;
            }
        }
        self.model.backward(cache, &d);
    }
}

/// `½‖xW + b − y‖²`; quadratic in the parameters, so central differences
/// are exact up to rounding.
pub struct LinearObjective {
    pub layer: Linear<f64>,
    pub input: Mat<f64>,
    pub target: Mat<f64>,
}

impl Parameters<f64> for LinearObjective {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
        self.layer.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
        self.layer.visit_mut(prefix, f)
    }
}

impl Objective for LinearObjective {
    fn loss(&self) -> f64 {
        let y = self.layer.forward(&self.input);
        0.5 * y.data.iter().zip(&self.target.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    fn accumulate_gradients(&mut self) {
        let mut y = self.layer.forward(&self.input);
        y.data.iter_mut().zip(&self.target.data).for_each(|(a, b)| *a -= b);
        self.layer.backward(&self.input, &y);
    }
}

/// Checks an autoencoder's reconstruction-loss gradients on `sample`.
pub fn gradient_check(model: &Autoencoder<f32>, sample: &[ImagePatch], epsilon: f64) -> Result<GradCheckReport> {
    let input = patches_to_tensor(sample)?.cast::<f64>();
    let mut obj = AutoencoderObjective {
        model: model.cast(),
        input,
    };
    // surface shape errors before the loss closure's expects
    obj.model.forward_batch(&obj.input, true)?;
    Ok(gradient_check_objective(&mut obj, 64, epsilon, 0x6_12AD))
}
