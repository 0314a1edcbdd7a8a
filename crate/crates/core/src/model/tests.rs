use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::PatchSpec;

fn tiny_vit() -> ViTLayerSpec {
    ViTLayerSpec {
        token_patch: 4,
        embed_dim: 8,
        heads: 2,
        transformer_depth: 1,
    }
}

fn random_batch(n: usize, side: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * 3 * side * side;
    Tensor::from_vec([n, 3, side, side], (0..len).map(|_| rng.random()).collect())
}

fn spec(depth: usize, side: usize) -> AutoencoderSpec {
    let mut s = AutoencoderSpec::new(depth, PatchSpec::square(side).unwrap()).with_base_channels(4);
    s.vit = tiny_vit();
    s
}

#[test]
fn reconstruction_shape_matches_input_for_every_variant() {
    for depth in 1..=4 {
        for placement in [VitPlacement::None, VitPlacement::Outer, VitPlacement::Inner, VitPlacement::Latent] {
            if placement == VitPlacement::Inner && depth < 2 {
                continue;
            }
            for skips in [false, true] {
                let s = spec(depth, 64).with_vit(placement).with_skips(skips);
                let m = Autoencoder::<f32>::new(&s, 1).unwrap();
                let y = m.reconstruct(&random_batch(2, 64, 2)).unwrap();
                assert_eq!(y.shape(), [2, 3, 64, 64], "{}", s.name());
                assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

#[test]
fn field_sized_patch_round_trips_through_the_default_model() {
    let s = AutoencoderSpec::new(3, PatchSpec::field());
    let m = build_autoencoder(&s, 0).unwrap();
    let p = crate::imaging::ImagePatch::new(crate::imaging::Raster::filled(448, 448, [0.4, 0.5, 0.6]));
    let out = m.forward(&p).unwrap();
    assert_eq!((out.width(), out.height()), (448, 448));
}

#[test]
fn vit_placement_counts() {
    let count = |s: AutoencoderSpec| Autoencoder::<f32>::new(&s, 0).unwrap().vit_layer_count();
    assert_eq!(count(spec(3, 64)), 0);
    assert_eq!(count(spec(3, 64).with_vit(VitPlacement::Outer)), 2);
    assert_eq!(count(spec(3, 64).with_vit(VitPlacement::Inner)), 2);
    assert_eq!(count(spec(3, 64).with_vit(VitPlacement::Latent)), 1);
    let mut enc_only = spec(3, 64).with_vit(VitPlacement::Outer);
    enc_only.outer_vit_encoder_only = true;
    assert_eq!(count(enc_only), 1);
}

#[test]
fn block_layout_follows_the_spec() {
    let s = spec(3, 64);
    let blocks = s.block_specs();
    assert_eq!(blocks.len(), 7);
    let latent = &blocks[3];
    assert_eq!((latent.location, latent.resample), (BlockLocation::Latent, Resample::None));
    assert!(blocks[..3].iter().all(|b| b.resample == Resample::Down2 && b.side == Some(BlockSide::Encoder)));
    assert!(blocks[4..].iter().all(|b| b.resample == Resample::Up2 && b.side == Some(BlockSide::Decoder)));
    assert_eq!(blocks[0].location, BlockLocation::Outer);
    assert_eq!(blocks[6].location, BlockLocation::Outer);
    assert_eq!(s.latent_shape(), (16, 8, 8));

    let m = Autoencoder::<f32>::new(&s, 0).unwrap();
    assert!(m.latent.norm.is_none(), "latent block holds only its first layer");
    assert!(m.encoder.iter().chain(&m.decoder).all(|b| b.norm.is_some()));
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(spec(1, 64).with_vit(VitPlacement::Inner).validate().is_err());
    let mut s = spec(1, 64);
    s.depth = 0;
    assert!(s.validate().is_err());
    assert!(AutoencoderSpec::new(3, PatchSpec::square(20).unwrap()).validate().is_err());
    // latent map 2×2 is not divisible by a 4-pixel token
    assert!(spec(4, 32).with_vit(VitPlacement::Latent).validate().is_err());
}

#[test]
fn wrong_input_size_is_a_dimension_error() {
    let m = Autoencoder::<f32>::new(&spec(2, 32), 0).unwrap();
    assert!(matches!(m.reconstruct(&random_batch(1, 64, 0)), Err(crate::Error::Dimension(_))));
}

#[test]
fn inference_is_independent_of_batch_composition() {
    let m = Autoencoder::<f32>::new(&spec(2, 32), 3).unwrap();
    let x = random_batch(3, 32, 4);
    let all = m.reconstruct(&x).unwrap();
    for i in 0..3 {
        let one = Tensor::from_vec([1, 3, 32, 32], x.item(i).to_vec());
        let y = m.reconstruct(&one).unwrap();
        for (a, b) in y.data().iter().zip(all.item(i)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn vit_layer_output_is_constant_per_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let layer = VitLayer::<f32>::new(tiny_vit(), 3, 5, 8, 12, &mut rng).unwrap();
    assert_eq!(layer.n_tokens(), 6);
    let x = random_batch(1, 12, 1);
    let x = Tensor::from_vec([1, 3, 8, 12], x.data()[..3 * 8 * 12].to_vec());
    let (y, _) = layer.forward(&x).unwrap();
    assert_eq!(y.shape(), [1, 5, 8, 12]);
    let at = |c: usize, yy: usize, xx: usize| y.data()[c * 96 + yy * 12 + xx];
    for c in 0..5 {
        assert_eq!(at(c, 0, 0), at(c, 3, 3));
        assert_eq!(at(c, 4, 8), at(c, 7, 11));
    }
    assert!(ViTLayerSpec { embed_dim: 9, ..tiny_vit() }.validate(8, 8).is_err());
    assert!(tiny_vit().validate(8, 10).is_err());
}

#[test]
fn classifier_outputs_a_distribution() {
    let s = ClassifierSpec::new(vec!["a".into(), "b".into(), "c".into()], 16);
    let m = build_classifier(&s, 1).unwrap();
    let crops: Vec<_> = (0..4)
        .map(|i| crate::imaging::Raster::filled(5 + i, 9, [0.1 * i as f32, 0.5, 0.9]))
        .collect();
    for p in m.predict_batch(&crops).unwrap() {
        assert_eq!(p.distribution.len(), 3);
        assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p.score, p.distribution[p.class]);
        assert_eq!(p.label, s.labels[p.class]);
    }
    assert!(ClassifierSpec::new(vec!["only".into()], 16).validate().is_err());
    assert!(ClassifierSpec::new(vec!["a".into(), "b".into()], 18).validate().is_err());
}

#[test]
fn fit_to_square_keeps_aspect_on_black() {
    let r = crate::imaging::Raster::filled(20, 10, [1.0; 3]);
    let s = fit_to_square(&r, 8);
    assert_eq!((s.width(), s.height()), (8, 8));
    assert_eq!(s.pixel(0, 0), [0.0; 3]);
    assert_eq!(s.pixel(4, 4), [1.0; 3]);
}

#[test]
fn autoencoder_checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ae.ckpt");
    let s = spec(2, 32).with_vit(VitPlacement::Outer).with_skips(true);
    let mut m = Autoencoder::<f32>::new(&s, 5).unwrap();
    // move the batch-norm buffers off their defaults
    m.forward_batch(&random_batch(4, 32, 6), true).unwrap();
    let x = random_batch(2, 32, 7);
    let (_, cache) = m.forward_batch(&x, true).unwrap();
    m.backward(cache, &Tensor::zeros([2, 3, 32, 32]));
    save_autoencoder(&m, &path).unwrap();
    let back = load_autoencoder(&path).unwrap();
    assert_eq!(back.spec, s);
    assert_eq!(back.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
    assert!(load_autoencoder_expecting(&path, &s).is_ok());
    assert!(load_autoencoder_expecting(&path, &s.with_skips(false)).is_err());
    assert!(load_classifier(&path).is_err());
    assert!(matches!(read_spec(&path).unwrap(), ModelSpec::Autoencoder(_)));
}

#[test]
fn classifier_checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cls.ckpt");
    let m = build_classifier(&ClassifierSpec::new(vec!["a".into(), "b".into()], 8), 2).unwrap();
    save_classifier(&m, &path).unwrap();
    let back = load_classifier(&path).unwrap();
    let r = [crate::imaging::Raster::filled(6, 6, [0.3, 0.2, 0.9])];
    assert_eq!(back.predict_batch(&r).unwrap(), m.predict_batch(&r).unwrap());
    assert!(load_autoencoder(&path).is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(matches!(load_autoencoder(&path), Err(crate::Error::Checkpoint(_))));

    let m = Autoencoder::<f32>::new(&spec(1, 16), 0).unwrap();
    save_autoencoder(&m, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 2);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_autoencoder(&path), Err(crate::Error::Checkpoint(_))));
}

#[test]
fn cast_round_trip_preserves_outputs() {
    let m = Autoencoder::<f32>::new(&spec(2, 32), 8).unwrap();
    let back: Autoencoder<f32> = m.cast::<f64>().cast();
    let x = random_batch(1, 32, 1);
    assert_eq!(back.reconstruct(&x).unwrap(), m.reconstruct(&x).unwrap());
}

#[test]
fn patch_tensor_conversion_round_trips() {
    let x = random_batch(2, 16, 3);
    let patches = tensor_to_patches(&x);
    assert_eq!(patches_to_tensor(&patches).unwrap(), x);
}
