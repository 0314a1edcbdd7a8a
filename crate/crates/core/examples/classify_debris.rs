//! Trains the crop classifier on two synthetic shapes and shows the
//! unknown-label policy at a few thresholds.

use fodloc::data::{generate_scenes, streams, PatchSpec, Shape, SyntheticSceneConfig};
use fodloc::eval::classifier_accuracy;
use fodloc::imaging::crop;
use fodloc::pipeline::{classify_detections, Detection, UnknownPolicy};
use fodloc::training::{train_classifier, LabeledCrop, TrainConfig};

fn crops(shape: Shape, class: usize, seed: u64, n: usize) -> Vec<LabeledCrop> {
    let mut cfg = SyntheticSceneConfig::new(seed, PatchSpec::square(64).unwrap());
    cfg.objects.shapes = vec![shape];
    generate_scenes(&cfg, streams::TEST, n)
        .into_iter()
        .map(|s| LabeledCrop {
            raster: crop(&s.patch, &s.ground_truth[0].bbox).unwrap().raster,
            class,
        })
        .collect()
}

fn main() -> fodloc::Result<()> {
    let labels = vec!["cross".to_string(), "triangle".to_string()];
    let mut train = crops(Shape::Cross, 0, 1, 120);
    train.extend(crops(Shape::Triangle, 1, 2, 120));
    let mut test = crops(Shape::Cross, 0, 3, 50);
    test.extend(crops(Shape::Triangle, 1, 4, 50));

    let tc = TrainConfig {
        epochs: 8,
        ..Default::default()
    };
    let (model, _) = train_classifier(&train, &labels, 32, &tc)?;
    println!("held-out accuracy {:.3}", classifier_accuracy(&model, &test)?);

    let mut cfg = SyntheticSceneConfig::new(5, PatchSpec::square(64)?);
    cfg.objects.count = (2, 2);
    cfg.objects.shapes = vec![Shape::Cross, Shape::Triangle, Shape::Disc];
    let scene = &generate_scenes(&cfg, streams::TEST, 1)[0];
    let dets: Vec<Detection> = scene
        .ground_truth
        .iter()
        .map(|g| Detection {
            patch_id: "scene".into(),
            bbox: g.bbox,
            mean_difference: 0.0,
            label: None,
            score: None,
            grid: None,
        })
        .collect();
    for tau in [0.0, 0.9, 1.0] {
        let out = classify_detections(&model, &scene.patch, &dets, &UnknownPolicy::new(tau)?)?;
        for (d, g) in out.iter().zip(&scene.ground_truth) {
            println!("tau {tau}: true {:>9} -> {} ({:.3})", g.label, d.label.as_deref().unwrap_or("-"), d.score.unwrap_or(0.0));
        }
    }
    Ok(())
}
