//! Trains a small model, then localizes debris in synthetic test patches
//! and in a frame built from four of them, writing a detection CSV.

use fodloc::data::{generate_scenes, streams, Frame, PatchSpec, SyntheticSceneConfig};
use fodloc::eval::evaluate;
use fodloc::imaging::Raster;
use fodloc::model::AutoencoderSpec;
use fodloc::pipeline::{localize_frame, localize_patches, write_detections, LocalizeConfig};
use fodloc::training::{train_autoencoder, TrainConfig};

fn main() -> fodloc::Result<()> {
    let cfg = SyntheticSceneConfig::new(3, PatchSpec::square(64)?);
    let train: Vec<_> = generate_scenes(&cfg.clean(), streams::TRAIN, 400).into_iter().map(|s| s.patch).collect();
    let tc = TrainConfig {
        epochs: 8,
        ..Default::default()
    };
    let (model, _) = train_autoencoder(&train, &AutoencoderSpec::new(3, cfg.patch), &tc)?;

    let scenes = generate_scenes(&cfg, streams::TEST, 20);
    let ids: Vec<String> = (0..scenes.len()).map(|i| format!("test_{i:05}")).collect();
    let patches: Vec<_> = ids.iter().cloned().zip(scenes.iter().map(|s| s.patch.clone())).collect();
    let lc = LocalizeConfig::default();
    let dets: Vec<_> = localize_patches(&model, &patches, &lc)?.into_iter().flatten().collect();
    write_detections(std::io::stdout().lock(), &dets)?;

    let gts: Vec<_> = scenes
        .iter()
        .zip(&ids)
        .flat_map(|(s, id)| s.ground_truth.iter().map(move |g| fodloc::data::GroundTruth { patch_id: id.clone(), ..g.clone() }))
        .collect();
    let report = evaluate(&dets, &gts, 0.3);
    println!("detection rate {:.3} ({}/{})", report.detection_rate, report.n_correct, report.n_ground_truth);

    let mut raster = Raster::filled(128, 128, [0.0; 3]);
    for (i, s) in scenes.iter().take(4).enumerate() {
        raster.paste(&s.patch.raster, (i % 2) * 64, (i / 2) * 64);
    }
    let (frame_dets, mask) = localize_frame(&model, &Frame::new(raster, "mosaic"), &cfg.patch, &lc)?;
    println!("mosaic: {} detections, {} pixels segmented", frame_dets.len(), mask.count());
    for d in frame_dets {
        println!("  {} {:?}", d.patch_id, d.bbox);
    }
    Ok(())
}
