use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{generate_scenes, PatchSpec, SyntheticSceneConfig};
use crate::model::layers::{Linear, Mat};
use crate::model::{ViTLayerSpec, VitLayer, VitPlacement};

fn random_patches(n: usize, side: usize, seed: u64) -> Vec<ImagePatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..side * side * 3).map(|_| rng.random::<f32>()).collect();
            ImagePatch::new(Raster::new(side, side, data).unwrap())
        })
        .collect()
}

fn tiny_vit() -> ViTLayerSpec {
    ViTLayerSpec {
        token_patch: 4,
        embed_dim: 8,
        heads: 2,
        transformer_depth: 1,
    }
}

#[test]
fn conv_autoencoder_gradients_match_finite_differences() {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(16).unwrap()).with_base_channels(4);
    let model = Autoencoder::new(&spec, 1).unwrap();
    let report = gradient_check(&model, &random_patches(2, 16, 2), 1e-5).unwrap();
    assert!(report.checked >= 50, "{report:?}");
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn skip_autoencoder_gradients_match_finite_differences() {
    let spec = AutoencoderSpec::new(2, PatchSpec::square(16).unwrap())
        .with_base_channels(2)
        .with_skips(true);
    let model = Autoencoder::new(&spec, 3).unwrap();
    let report = gradient_check(&model, &random_patches(2, 16, 4), 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn vit_autoencoder_gradients_match_finite_differences() {
    let mut spec = AutoencoderSpec::new(1, PatchSpec::square(16).unwrap())
        .with_base_channels(4)
        .with_vit(VitPlacement::Outer);
    spec.vit = tiny_vit();
    let model = Autoencoder::new(&spec, 5).unwrap();
    assert_eq!(model.vit_layer_count(), 2);
    let report = gradient_check(&model, &random_patches(2, 16, 6), 1e-5).unwrap();
    assert!(report.checked >= 50, "{report:?}");
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn standalone_vit_layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = VitLayer::<f64>::new(tiny_vit(), 3, 5, 8, 8, &mut rng).unwrap();
    let mut obj = VitObjective::random(layer, 2, 8);
    let report = gradient_check_objective(&mut obj, 80, 1e-5, 9);
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let spec = ClassifierSpec::new(vec!["a".into(), "b".into(), "c".into()], 8);
    let model = Classifier::<f64>::new(&spec, 10).unwrap();
    let input = patches_to_tensor(&random_patches(3, 8, 11)).unwrap().cast::<f64>();
    let mut obj = ClassifierObjective {
        model,
        input,
        classes: vec![0, 2, 1],
    };
    let report = gradient_check_objective(&mut obj, 60, 1e-5, 12);
    assert!(report.max_relative_error < 1e-3, "{report:?}");
}

#[test]
fn linear_quadratic_gradients_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let layer = Linear::<f64>::new(4, 3, 0.5, &mut rng);
    let mut mat = |r, c| Mat {
        rows: r,
        cols: c,
        data: (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let input = mat(5, 4);
    let target = mat(5, 3);
    let mut obj = LinearObjective { layer, input, target };
    let report = gradient_check_objective(&mut obj, 50, 1e-4, 14);
    assert_eq!(report.checked, 15);
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

fn clean_patches(n: usize, side: usize) -> Vec<ImagePatch> {
    let cfg = SyntheticSceneConfig::new(21, PatchSpec::square(side).unwrap()).clean();
    generate_scenes(&cfg, 1, n).into_iter().map(|s| s.patch).collect()
}

#[test]
fn zero_epochs_returns_initialization() {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(16).unwrap()).with_base_channels(2);
    let cfg = TrainConfig {
        epochs: 0,
        seed: 4,
        ..Default::default()
    };
    let (model, history) = train_autoencoder(&clean_patches(4, 16), &spec, &cfg).unwrap();
    let init = Autoencoder::<f32>::new(&spec, 4).unwrap();
    let x = patches_to_tensor(&clean_patches(2, 16)).unwrap();
    assert_eq!(model.reconstruct(&x).unwrap(), init.reconstruct(&x).unwrap());
    assert!(history.train_loss.is_empty());
    assert_eq!(history.best_epoch, None);
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let spec = AutoencoderSpec::new(2, PatchSpec::square(32).unwrap()).with_base_channels(4);
    let data = clean_patches(64, 32);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let (_, h1) = train_autoencoder(&data, &spec, &cfg).unwrap();
    let (_, h2) = train_autoencoder(&data, &spec, &cfg).unwrap();
    assert_eq!(h1, h2);
    assert!(h1.train_loss.last().unwrap() < &h1.train_loss[0], "{h1:?}");
    assert!(h1.train_loss.iter().chain(&h1.val_loss).all(|v| v.is_finite()));
}

#[test]
fn empty_dataset_is_a_data_error() {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(16).unwrap());
    let err = train_autoencoder(&[], &spec, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn mismatched_patch_size_is_rejected() {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(32).unwrap());
    let err = train_autoencoder(&clean_patches(2, 16), &spec, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}

#[test]
fn divergence_is_reported_with_its_epoch() {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(16).unwrap()).with_base_channels(2);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        learning_rate: 1e30,
        optimizer: OptimizerKind::Sgd,
        ..Default::default()
    };
    match train_autoencoder(&clean_patches(8, 16), &spec, &cfg) {
        Err(Error::Numeric { epoch, .. }) => assert!((1..=3).contains(&epoch)),
        other => panic!("expected a numeric error, got {:?}", other.map(|(_, h)| h)),
    }
}

#[test]
fn single_class_classifier_data_is_rejected() {
    let crops = vec![
        LabeledCrop {
            raster: Raster::filled(8, 8, [0.5; 3]),
            class: 0,
        };
        4
    ];
    let err = train_classifier(&crops, &["a".into(), "b".into()], 8, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn classifier_zero_epochs_is_untrained() {
    let crops: Vec<LabeledCrop> = (0..4)
        .map(|i| LabeledCrop {
            raster: Raster::filled(6, 9, [i as f32 / 4.0; 3]),
            class: i % 2,
        })
        .collect();
    let labels = vec!["a".to_string(), "b".to_string()];
    let cfg = TrainConfig {
        epochs: 0,
        seed: 2,
        ..Default::default()
    };
    let (model, h) = train_classifier(&crops, &labels, 8, &cfg).unwrap();
    let init = Classifier::<f32>::new(&ClassifierSpec::new(labels, 8), 2).unwrap();
    let r = [crops[0].raster.clone()];
    assert_eq!(model.predict_batch(&r).unwrap(), init.predict_batch(&r).unwrap());
    assert_eq!(h.val_accuracy, Some(vec![]));
}

#[test]
fn history_csv_has_expected_columns() {
    let h = TrainHistory {
        train_loss: vec![0.5, 0.25],
        val_loss: vec![0.4, 0.3],
        val_accuracy: Some(vec![0.5, 1.0]),
        best_epoch: Some(2),
    };
    let mut buf = Vec::new();
    h.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "epoch,train_loss,val_loss,val_accuracy\n1,0.5,0.4,0.5\n2,0.25,0.3,1\n");
}
