//! Builds each autoencoder variant and prints its block layout, parameter
//! count and latent shape.

use fodloc::data::PatchSpec;
use fodloc::model::{Autoencoder, AutoencoderSpec, Parameters, VitPlacement};

fn main() -> fodloc::Result<()> {
    let patch = PatchSpec::square(128)?;
    let specs = [
        AutoencoderSpec::new(2, patch),
        AutoencoderSpec::new(3, patch),
        AutoencoderSpec::new(4, patch),
        AutoencoderSpec::new(3, patch).with_skips(true),
        AutoencoderSpec::new(3, patch).with_vit(VitPlacement::Outer),
        AutoencoderSpec::new(3, patch).with_vit(VitPlacement::Inner),
        AutoencoderSpec::new(3, patch).with_vit(VitPlacement::Latent),
    ];
    for spec in specs {
        let model = Autoencoder::<f32>::new(&spec, 0)?;
        let mut params = 0;
        model.visit("", &mut |_, p| params += p.value.len());
        println!(
            "{:<22} params {:>8}  vit layers {}  latent {:?}",
            spec.name(),
            params,
            model.vit_layer_count(),
            spec.latent_shape()
        );
        for b in spec.block_specs() {
            println!("    {b:?}");
        }
    }
    Ok(())
}
