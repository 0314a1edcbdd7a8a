use super::*;
use crate::data::PatchSpec;
use crate::imaging::Raster;
use crate::model::{AutoencoderSpec, ClassifierSpec};

fn textured(w: usize, h: usize, seed: usize) -> Raster {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push((((x * 7 + y * 13 + c * 5 + seed) % 17) as f32) / 16.0);
            }
        }
    }
    Raster::new(w, h, data).unwrap()
}

fn small_model(side: usize) -> Autoencoder<f32> {
    let spec = AutoencoderSpec::new(1, PatchSpec::square(side).unwrap()).with_base_channels(2);
    Autoencoder::new(&spec, 1).unwrap()
}

#[test]
fn identity_reconstruction_yields_no_detection() {
    let p = ImagePatch::new(textured(32, 32, 0));
    let a = analyze_reconstruction(&p, &p, &LocalizeConfig::default()).unwrap();
    assert!(a.outcome.is_degenerate());
    assert!(a.segmentation.is_empty());
    assert!(a.detection("p").is_none());
}

#[test]
fn pasted_square_is_boxed_exactly() {
    let clean = ImagePatch::new(Raster::filled(32, 32, [0.5; 3]));
    let mut dirty = clean.clone();
    for y in 10..18 {
        for x in 4..20 {
            dirty.raster.set_pixel(x, y, [1.0, 0.0, 0.0]);
        }
    }
    let a = analyze_reconstruction(&dirty, &clean, &LocalizeConfig::default()).unwrap();
    let d = a.detection("p").unwrap();
    assert_eq!(d.bbox, BoundingBox::new(4, 10, 20, 18).unwrap());
    assert!((d.mean_difference - 0.5).abs() < 1e-6);
}

#[test]
fn min_area_suppresses_specks() {
    let clean = ImagePatch::new(Raster::filled(16, 16, [0.5; 3]));
    let mut dirty = clean.clone();
    dirty.raster.set_pixel(3, 3, [1.0; 3]);
    let cfg = |min_area| LocalizeConfig {
        min_area,
        ..Default::default()
    };
    assert!(analyze_reconstruction(&dirty, &clean, &cfg(2)).unwrap().bbox.is_none());
    assert!(analyze_reconstruction(&dirty, &clean, &cfg(1)).unwrap().bbox.is_some());
}

#[test]
fn frame_boxes_map_back_to_patch_boxes() {
    let model = small_model(16);
    let frame = Frame::new(textured(64, 48, 3), "frame");
    let spec = PatchSpec::square(16).unwrap();
    let cfg = LocalizeConfig::default();
    let (dets, mask) = localize_frame(&model, &frame, &spec, &cfg).unwrap();
    assert_eq!((mask.width(), mask.height()), (64, 48));
    let patches = split_into_patches(&frame, &spec).unwrap();
    let expected: Vec<_> = patches
        .iter()
        .filter_map(|p| {
            let pos = p.grid.unwrap();
            localize_patch(&model, p, &cell_id("frame", pos), &cfg).unwrap().map(|d| (pos, d.bbox))
        })
        .collect();
    assert_eq!(dets.len(), expected.len());
    for (d, (pos, b)) in dets.iter().zip(&expected) {
        assert_eq!(d.grid, Some(*pos));
        assert_eq!(d.bbox, b.translate((pos.col * 16) as u32, (pos.row * 16) as u32));
        assert!(d.bbox.fits_within(64, 48));
    }
    // determinism
    assert_eq!(localize_frame(&model, &frame, &spec, &cfg).unwrap().0, dets);
}

#[test]
fn field_frame_is_evaluated_as_an_eight_by_four_grid() {
    let spec = AutoencoderSpec::new(1, PatchSpec::field()).with_base_channels(1);
    let model = Autoencoder::new(&spec, 0).unwrap();
    let frame = Frame::new(Raster::filled(3840, 2160, [0.3, 0.3, 0.3]), "uas");
    let (dets, mask) = localize_frame(&model, &frame, &PatchSpec::field(), &LocalizeConfig::default()).unwrap();
    assert_eq!((mask.width(), mask.height()), (3584, 1792));
    assert!(dets.iter().all(|d| d.grid.is_some_and(|g| g.row < 4 && g.col < 8)));
}

#[test]
fn mismatched_patch_is_rejected() {
    let model = small_model(16);
    let p = ImagePatch::new(textured(32, 32, 0));
    assert!(matches!(
        localize_patch(&model, &p, "x", &LocalizeConfig::default()),
        Err(Error::Dimension(_))
    ));
}

fn classifier() -> Classifier<f32> {
    Classifier::new(&ClassifierSpec::new(vec!["a".into(), "b".into()], 8), 0).unwrap()
}

fn detections() -> (ImagePatch, Vec<Detection>) {
    let patch = ImagePatch::new(textured(32, 32, 1));
    let dets = [(0, 0, 8, 8), (10, 12, 30, 20)]
        .iter()
        .map(|&(a, b, c, d)| Detection {
            patch_id: "p7".into(),
            bbox: BoundingBox::new(a, b, c, d).unwrap(),
            mean_difference: 0.4,
            label: None,
            score: None,
            grid: None,
        })
        .collect();
    (patch, dets)
}

#[test]
fn full_threshold_marks_everything_unknown_and_saves_crops() {
    let dir = tempfile::tempdir().unwrap();
    let (patch, dets) = detections();
    let policy = UnknownPolicy::new(1.0).unwrap().with_save_dir(dir.path());
    let out = classify_detections(&classifier(), &patch, &dets, &policy).unwrap();
    assert!(out.iter().all(|d| d.label.as_deref() == Some(UNKNOWN_LABEL) && d.score.is_some()));
    assert!(dir.path().join("p7_0.png").exists() && dir.path().join("p7_1.png").exists());
}

#[test]
fn zero_threshold_never_yields_unknown() {
    let (patch, dets) = detections();
    let out = classify_detections(&classifier(), &patch, &dets, &UnknownPolicy::new(0.0).unwrap()).unwrap();
    assert!(out.iter().all(|d| matches!(d.label.as_deref(), Some("a" | "b"))));
}

#[test]
fn failed_unknown_save_still_returns_labels() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let (patch, dets) = detections();
    let policy = UnknownPolicy::new(1.0).unwrap().with_save_dir(blocker.join("sub"));
    let out = classify_detections(&classifier(), &patch, &dets, &policy).unwrap();
    assert_eq!(out.len(), 2);
}

#[test]
fn invalid_unknown_threshold_is_rejected() {
    assert!(UnknownPolicy::new(1.5).is_err());
    assert!(UnknownPolicy::new(-0.1).is_err());
}

#[test]
fn detection_csv_round_trip() {
    let (_, mut dets) = detections();
    dets[1].label = Some("bolt".into());
    dets[1].score = Some(0.875);
    let mut buf = Vec::new();
    write_detections(&mut buf, &dets).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("patch_id,x_min,y_min,x_max,y_max,mean_difference,label,score\n"));
    assert_eq!(read_detections(buf.as_slice()).unwrap(), dets);

    let empty = {
        let mut b = Vec::new();
        write_detections(&mut b, &[]).unwrap();
        b
    };
    assert!(read_detections(empty.as_slice()).unwrap().is_empty());
}

#[test]
fn malformed_detection_rows_report_their_line() {
    let head = DETECTION_HEADER.join(",");
    let bad_box = format!("{head}\np,0,0,4,4,0.1,,\np,5,0,4,4,0.1,,\n");
    assert!(matches!(read_detections(bad_box.as_bytes()), Err(Error::Validation { line: 3, .. })));
    let bad_num = format!("{head}\np,0,zero,4,4,0.1,,\n");
    assert!(matches!(read_detections(bad_num.as_bytes()), Err(Error::Parse { line: 2, .. })));
    let half = format!("{head}\np,0,0,4,4,0.1,bolt,\n");
    assert!(matches!(read_detections(half.as_bytes()), Err(Error::Validation { line: 2, .. })));
}
