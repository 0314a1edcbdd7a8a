//! Compares analytic gradients with central finite differences for a
//! convolutional and a ViT autoencoder on 16x16 inputs.

use fodloc::data::PatchSpec;
use fodloc::imaging::{ImagePatch, Raster};
use fodloc::model::{Autoencoder, AutoencoderSpec, ViTLayerSpec, VitPlacement};
use fodloc::training::gradient_check;
use rand::{Rng, SeedableRng};

fn main() -> fodloc::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let sample: Vec<ImagePatch> = (0..2)
        .map(|_| ImagePatch::new(Raster::new(16, 16, (0..16 * 16 * 3).map(|_| rng.random()).collect()).unwrap()))
        .collect();

    let conv = AutoencoderSpec::new(2, PatchSpec::square(16)?).with_base_channels(4);
    let mut vit = AutoencoderSpec::new(1, PatchSpec::square(16)?).with_vit(VitPlacement::Outer);
    vit.vit = ViTLayerSpec {
        token_patch: 4,
        embed_dim: 8,
        heads: 2,
        transformer_depth: 1,
    };
    for spec in [conv, vit] {
        let report = gradient_check(&Autoencoder::<f32>::new(&spec, 1)?, &sample, 1e-5)?;
        println!(
            "{:<14} {} parameters checked, max relative error {:.2e} (worst {})",
            spec.name(),
            report.checked,
            report.max_relative_error,
            report.worst.as_deref().unwrap_or("-")
        );
    }
    Ok(())
}
