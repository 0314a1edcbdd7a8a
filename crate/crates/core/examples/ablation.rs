//! A reduced architecture ablation: trains several specs on the same
//! synthetic data and prints the results table.
//!
//! cargo run --release --example ablation

use fodloc::data::{generate_scenes, streams, GroundTruth, PatchSpec, SyntheticSceneConfig};
use fodloc::eval::{run_ablation, write_ablation_csv, AblationConfig, AblationData};
use fodloc::model::{AutoencoderSpec, VitPlacement};
use fodloc::training::TrainConfig;

fn main() -> fodloc::Result<()> {
    let cfg = SyntheticSceneConfig::new(11, PatchSpec::square(64)?);
    let train = generate_scenes(&cfg.clean(), streams::TRAIN, 300).into_iter().map(|s| s.patch).collect();
    let clean_test = generate_scenes(&cfg.clean(), streams::TEST + 1, 40).into_iter().map(|s| s.patch).collect();
    let mut fod_test = Vec::new();
    let mut ground_truth = Vec::new();
    for (i, s) in generate_scenes(&cfg, streams::TEST, 40).into_iter().enumerate() {
        let id = format!("fod_{i}");
        ground_truth.extend(s.ground_truth.into_iter().map(|g| GroundTruth { patch_id: id.clone(), ..g }));
        fod_test.push((id, s.patch));
    }
    let data = AblationData {
        train,
        clean_test,
        fod_test,
        ground_truth,
    };

    let specs = [
        AutoencoderSpec::new(2, cfg.patch),
        AutoencoderSpec::new(3, cfg.patch),
        AutoencoderSpec::new(3, cfg.patch).with_skips(true),
        AutoencoderSpec::new(3, cfg.patch).with_vit(VitPlacement::Latent),
    ];
    let ac = AblationConfig {
        train: TrainConfig {
            epochs: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let rows = run_ablation(&specs, &data, &ac);
    write_ablation_csv(std::io::stdout().lock(), &rows)
}
