//! Trains a depth-3 convolutional autoencoder on synthetic clean pavement,
//! saves a checkpoint and the per-epoch losses.
//!
//! cargo run --release --example train_autoencoder -- [n_patches] [epochs]

use fodloc::data::{generate_scenes, streams, PatchSpec, SyntheticSceneConfig};
use fodloc::model::{save_autoencoder, AutoencoderSpec};
use fodloc::training::{train_autoencoder, TrainConfig};

fn main() -> fodloc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(256);
    let epochs = args.next().unwrap_or(5);

    let cfg = SyntheticSceneConfig::new(1, PatchSpec::square(64)?);
    let patches: Vec<_> = generate_scenes(&cfg.clean(), streams::TRAIN, n).into_iter().map(|s| s.patch).collect();
    let spec = AutoencoderSpec::new(3, cfg.patch);
    let tc = TrainConfig {
        epochs,
        ..Default::default()
    };
    let (model, history) = train_autoencoder(&patches, &spec, &tc)?;

    history.write_csv(std::io::stdout().lock()).expect("stdout");
    let out = std::env::temp_dir().join("depth3.ckpt");
    save_autoencoder(&model, &out)?;
    println!("best epoch {:?}, checkpoint at {}", history.best_epoch, out.display());
    Ok(())
}
