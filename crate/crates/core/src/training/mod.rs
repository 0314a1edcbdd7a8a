//! Mini-batch training of the autoencoder (mean squared reconstruction
//! error) and the crop classifier (categorical cross-entropy), plus
//! finite-difference gradient verification.

mod gradcheck;
mod loss;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gradcheck::{
    gradient_check, gradient_check_objective, AutoencoderObjective, ClassifierObjective, GradCheckReport,
    LinearObjective, Objective, VitObjective,
};
pub use loss::{cross_entropy_loss, mse_grad, mse_loss, one_hot};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::imaging::{ImagePatch, Raster};
use crate::model::{
    fit_to_square, patches_to_tensor, softmax, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Fraction of the data held out for best-epoch selection.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses (and classifier validation accuracy).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Option<Vec<f64>>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss[,val_accuracy]`
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match &self.val_accuracy {
            Some(_) => writeln!(w, "epoch,train_loss,val_loss,val_accuracy")?,
            None => writeln!(w, "epoch,train_loss,val_loss")?,
        }
        for (i, tl) in self.train_loss.iter().enumerate() {
            let vl = self.val_loss.get(i).copied().unwrap_or(f64::NAN);
            match &self.val_accuracy {
                Some(acc) => writeln!(w, "{},{tl},{vl},{}", i + 1, acc[i])?,
                None => writeln!(w, "{},{tl},{vl}", i + 1)?,
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Seeded shuffle, then the first `ceil(fraction·n)` indices become the
/// validation set (at least one item stays in training).
fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if fraction > 0.0 && n > 1 {
        ((fraction * n as f64).ceil() as usize).min(n - 1)
    } else {
        0
    };
    let train = idx.split_off(n_val);
    (train, idx)
}

/// Batches of shuffled indices; a trailing single-item batch is dropped
/// when `batch > 1` since batch statistics need two samples.
fn batches(indices: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = indices.chunks(batch).map(<[usize]>::to_vec).collect();
    if batch > 1 && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
    }
    out
}

fn gather(patches: &[ImagePatch], idx: &[usize]) -> Result<Tensor<f32>> {
    let chosen: Vec<ImagePatch> = idx.iter().map(|&i| patches[i].clone()).collect();
    patches_to_tensor(&chosen)
}

/// Inference-mode reconstruction MSE averaged over patches.
pub fn reconstruction_mse(model: &Autoencoder<f32>, patches: &[ImagePatch], batch: usize) -> Result<f64> {
    if patches.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in patches.chunks(batch.max(1)) {
        let x = patches_to_tensor(chunk)?;
        let y = model.reconstruct(&x)?;
        total += mse_loss(y.data(), x.data())? * chunk.len() as f64;
    }
    Ok(total / patches.len() as f64)
}

/// Minimizes reconstruction MSE on clean patches and returns the parameters
/// of the epoch with the lowest validation loss.
pub fn train_autoencoder(
    dataset: &[ImagePatch],
    spec: &AutoencoderSpec,
    cfg: &TrainConfig,
) -> Result<(Autoencoder<f32>, TrainHistory)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let model = Autoencoder::new(spec, cfg.seed)?;
    if let Some(p) = dataset
        .iter()
        .find(|p| p.width() != spec.input_size.width || p.height() != spec.input_size.height)
    {
        return Err(Error::Dimension(format!(
            "training patch {}×{} does not match model input {}×{}",
            p.width(),
            p.height(),
            spec.input_size.width,
            spec.input_size.height
        )));
    }
    train_autoencoder_from(model, dataset, cfg)
}

/// Continues training an existing model.
pub fn train_autoencoder_from(
    mut model: Autoencoder<f32>,
    dataset: &[ImagePatch],
    cfg: &TrainConfig,
) -> Result<(Autoencoder<f32>, TrainHistory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_DA7A);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, &mut rng);
    let val: Vec<ImagePatch> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Autoencoder<f32>)> = None;
    let mut order = train_idx.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for b in batches(&order, cfg.batch_size) {
            let x = gather(dataset, &b)?;
            let (y, cache) = model.forward_batch(&x, true)?;
            let loss = mse_loss(y.data(), x.data())?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    epoch: epoch + 1,
                    message: format!("non-finite training loss {loss}"),
                });
            }
            let grad = Tensor::from_vec(y.shape(), mse_grad(y.data(), x.data()));
            model.backward(cache, &grad);
            opt.step(&mut model);
            sum += loss * b.len() as f64;
            count += b.len();
        }
        let train_loss = sum / count.max(1) as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            reconstruction_mse(&model, &val, cfg.batch_size)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Numeric {
                epoch: epoch + 1,
                message: format!("non-finite validation loss {val_loss}"),
            });
        }
        log::info!(
            "[{}] epoch {}/{}: train {train_loss:.6} val {val_loss:.6}",
            model.spec.name(),
            epoch + 1,
            cfg.epochs
        );
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = Some(epoch + 1);
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), history))
}

/// A crop with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCrop {
    pub raster: Raster,
    pub class: usize,
}

fn classifier_batch(prepared: &[ImagePatch], idx: &[usize]) -> Result<Tensor<f32>> {
    gather(prepared, idx)
}

/// Loss and accuracy of `model` on `items` in inference mode.
fn classifier_eval(
    model: &Classifier<f32>,
    prepared: &[ImagePatch],
    classes: &[usize],
    items: &[usize],
    batch: usize,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in items.chunks(batch.max(1)) {
        let (logits, _) = model.logits(&classifier_batch(prepared, chunk)?, false)?;
        for (probs, &i) in softmax(&logits).iter().zip(chunk) {
            loss += cross_entropy_loss(probs, &one_hot(classes[i], probs.len()))?;
            let argmax = probs
                .iter()
                .enumerate()
                .fold(0, |b, (k, &p)| if p > probs[b] { k } else { b });
            correct += usize::from(argmax == classes[i]);
        }
    }
    let n = items.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Minimizes cross-entropy over labelled crops; crops are letterboxed to the
/// classifier input once up front.
pub fn train_classifier(
    dataset: &[LabeledCrop],
    labels: &[String],
    input_size: usize,
    cfg: &TrainConfig,
) -> Result<(Classifier<f32>, TrainHistory)> {
    cfg.validate()?;
    let mut present: Vec<usize> = dataset.iter().map(|c| c.class).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Data(format!(
            "classifier training needs >= 2 classes, found {}",
            present.len()
        )));
    }
    if let Some(c) = dataset.iter().find(|c| c.class >= labels.len()) {
        return Err(Error::Data(format!("class index {} has no label", c.class)));
    }
    let spec = ClassifierSpec::new(labels.to_vec(), input_size);
    let mut model = Classifier::new(&spec, cfg.seed)?;
    let prepared: Vec<ImagePatch> = dataset
        .iter()
        .map(|c| ImagePatch::new(fit_to_square(&c.raster, input_size)))
        .collect();
    let classes: Vec<usize> = dataset.iter().map(|c| c.class).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC1A5_5E5);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.validation_fraction, &mut rng);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut history = TrainHistory {
        val_accuracy: Some(Vec::new()),
        ..Default::default()
    };
    let mut best: Option<(f64, Classifier<f32>)> = None;
    let mut order = train_idx.clone();
    let n_classes = labels.len();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for b in batches(&order, cfg.batch_size) {
            let x = classifier_batch(&prepared, &b)?;
            let (logits, cache) = model.logits(&x, true)?;
            let probs = softmax(&logits);
            let mut dlogits = crate::model::layers::Mat::zeros(b.len(), n_classes);
            let scale = 1.0 / b.len() as f64;
            for (r, (p, &i)) in probs.iter().zip(&b).enumerate() {
                sum += cross_entropy_loss(p, &one_hot(classes[i], n_classes))?;
                for k in 0..n_classes {
                    let y = if k == classes[i] { 1.0 } else { 0.0 };
                    dlogits.data[r * n_classes + k] = ((p[k] - y) * scale) as f32;
                }
            }
            count += b.len();
            model.backward(cache, &dlogits);
            opt.step(&mut model);
        }
        let train_loss = sum / count.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric {
                epoch: epoch + 1,
                message: format!("non-finite training loss {train_loss}"),
            });
        }
        let eval_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
        let (val_loss, val_acc) = classifier_eval(&model, &prepared, &classes, eval_idx, cfg.batch_size)?;
        log::info!(
            "[classifier] epoch {}/{}: train {train_loss:.5} val {val_loss:.5} acc {val_acc:.3}",
            epoch + 1,
            cfg.epochs
        );
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.val_accuracy.as_mut().expect("accuracy log").push(val_acc);
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            history.best_epoch = Some(epoch + 1);
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), history))
}

#[cfg(test)]
mod tests;
