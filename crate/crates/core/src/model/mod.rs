//! Network layers, the learning-block autoencoder, the crop classifier and
//! checkpoint I/O.

mod autoencoder;
mod checkpoint;
mod classifier;
pub mod layers;
mod real;
mod tensor;
pub mod vit;

pub use autoencoder::{
    build_autoencoder, Autoencoder, AutoencoderCache, AutoencoderSpec, BlockCache, BlockLocation, BlockSide,
    FirstLayer, LayerKind, LearningBlock, LearningBlockSpec, VitPlacement,
};
pub use checkpoint::{
    load_autoencoder, load_autoencoder_expecting, load_classifier, read_spec, save_autoencoder, save_classifier,
    ModelSpec, FORMAT_VERSION,
};
pub use classifier::{
    build_classifier, classify, fit_to_square, softmax, ClassPrediction, Classifier, ClassifierCache, ClassifierSpec,
};
pub use layers::{Param, Parameters, Resample};
pub use real::Real;
pub use tensor::Tensor;
pub use vit::{ViTLayerSpec, VitLayer};

use crate::error::{Error, Result};
use crate::imaging::{ImagePatch, Raster, CHANNELS};

/// Stacks equally sized patches into an `[N, 3, H, W]` tensor.
pub fn patches_to_tensor(patches: &[ImagePatch]) -> Result<Tensor<f32>> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Data("cannot batch zero patches".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut t = Tensor::zeros([patches.len(), CHANNELS, h, w]);
    for (i, p) in patches.iter().enumerate() {
        if p.width() != w || p.height() != h {
            return Err(Error::Dimension(format!(
                "batch mixes {w}×{h} and {}×{} patches",
                p.width(),
                p.height()
            )));
        }
        let dst = t.item_mut(i);
        for (j, px) in p.raster.data().chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                dst[c * w * h + j] = px[c];
            }
        }
    }
    Ok(t)
}

/// Splits an `[N, 3, H, W]` tensor back into patches, clamping into `[0, 1]`.
pub fn tensor_to_patches(t: &Tensor<f32>) -> Vec<ImagePatch> {
    let [n, c, h, w] = t.shape();
    assert_eq!(c, CHANNELS);
    (0..n)
        .map(|i| {
            let src = t.item(i);
            let mut data = vec![0.0f32; w * h * CHANNELS];
            for j in 0..w * h {
                for ch in 0..CHANNELS {
                    data[j * CHANNELS + ch] = src[ch * w * h + j];
                }
            }
            ImagePatch::new(Raster::from_unclamped(w, h, data))
        })
        .collect()
}

#[cfg(test)]
mod tests;
