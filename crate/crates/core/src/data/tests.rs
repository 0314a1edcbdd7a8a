use proptest::prelude::*;

use super::*;
use crate::imaging::{BoundingBox, GridPos};

fn ramp(w: usize, h: usize) -> Raster {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            data.extend([x as f32 / w as f32, y as f32 / h as f32, ((x ^ y) % 7) as f32 / 6.0]);
        }
    }
    Raster::new(w, h, data).unwrap()
}

fn frame(w: usize, h: usize) -> Frame {
    Frame::new(ramp(w, h), "f")
}

#[test]
fn patch_spec_rejects_small_sides() {
    assert!(PatchSpec::new(15, 16).is_err());
    assert!(PatchSpec::new(16, 16).is_ok());
    assert_eq!(PatchSpec::field(), PatchSpec::square(448).unwrap());
}

#[test]
fn resize_to_grid_floors_to_whole_patches() {
    let field = PatchSpec::field();
    let r = resize_to_grid(&frame(3840, 2160), &field).unwrap();
    assert_eq!((r.width(), r.height()), (3584, 1792));
    assert_eq!(grid_shape(&r, &field).unwrap(), (4, 8));

    let f = frame(448, 448);
    assert_eq!(resize_to_grid(&f, &field).unwrap(), f);

    let r = resize_to_grid(&frame(900, 450), &field).unwrap();
    assert_eq!((r.width(), r.height()), (896, 448));

    assert!(matches!(resize_to_grid(&frame(447, 900), &field), Err(Error::Size(_))));
}

#[test]
fn split_counts_and_positions() {
    let field = PatchSpec::field();
    let patches = split_into_patches(&frame(3584, 1792), &field).unwrap();
    assert_eq!(patches.len(), 32);
    assert!(patches.iter().all(|p| p.width() == 448 && p.height() == 448));
    assert_eq!(patches[9].grid, Some(GridPos { row: 1, col: 1 }));

    assert_eq!(split_into_patches(&frame(448, 448), &field).unwrap().len(), 1);
    let two = split_into_patches(&frame(896, 448), &field).unwrap();
    let pos: Vec<_> = two.iter().map(|p| p.grid.unwrap()).collect();
    assert_eq!(pos, [GridPos { row: 0, col: 0 }, GridPos { row: 0, col: 1 }]);

    assert!(matches!(split_into_patches(&frame(900, 448), &field), Err(Error::Size(_))));
}

#[test]
fn split_then_assemble_is_identity() {
    let spec = PatchSpec::new(16, 24).unwrap();
    let f = frame(64, 48);
    let patches = split_into_patches(&f, &spec).unwrap();
    assert_eq!(assemble_patches(&patches, 2, 4, &spec).unwrap(), f.raster);
    assert!(assemble_patches(&patches[1..], 2, 4, &spec).is_err());
}

#[test]
fn load_frame_reads_rgb_and_rejects_grayscale() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = dir.path().join("rgb.png");
    ramp(20, 10).save_png(&rgb).unwrap();
    let f = load_frame(&rgb).unwrap();
    assert_eq!((f.width(), f.height(), f.source_id.as_str()), (20, 10, "rgb"));
    assert!(f.raster.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let gray = dir.path().join("gray.png");
    image::GrayImage::from_pixel(8, 8, image::Luma([100])).save(&gray).unwrap();
    assert!(matches!(load_frame(&gray), Err(Error::Format(_))));

    assert!(matches!(load_frame(&dir.path().join("missing.png")), Err(Error::Io { .. })));
}

#[test]
fn load_frame_decodes_jpeg() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.jpg");
    ramp(64, 36).to_rgb8().save(&path).unwrap();
    let f = load_frame(&path).unwrap();
    assert_eq!((f.width(), f.height()), (64, 36));
}

const P: PatchSpec = PatchSpec { width: 448, height: 448 };

#[test]
fn annotation_examples() {
    let rows = read_annotations("patch_id,x_min,y_min,x_max,y_max,label\np001,10,20,60,90,Bolt\n".as_bytes(), &P).unwrap();
    assert_eq!(
        rows,
        [GroundTruth {
            patch_id: "p001".into(),
            bbox: BoundingBox::new(10, 20, 60, 90).unwrap(),
            label: "Bolt".into(),
        }]
    );
    assert!(read_annotations("patch_id,x_min,y_min,x_max,y_max,label\n".as_bytes(), &P)
        .unwrap()
        .is_empty());
}

#[test]
fn annotation_errors_carry_line_numbers() {
    let text = "patch_id,x_min,y_min,x_max,y_max,label\na,1,1,5,5,x\nb,60,20,10,90,Bolt\n";
    match read_annotations(text.as_bytes(), &P) {
        Err(Error::Validation { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let text = "patch_id,x_min,y_min,x_max,y_max,label\na,1,one,5,5,x\n";
    match read_annotations(text.as_bytes(), &P) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let text = "patch_id,x_min,y_min,x_max,y_max,label\na,400,1,449,5,x\n";
    assert!(matches!(read_annotations(text.as_bytes(), &P), Err(Error::Validation { line: 2, .. })));
    assert!(matches!(read_annotations("id,a\n".as_bytes(), &P), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn annotation_round_trip() {
    let rows = vec![
        GroundTruth {
            patch_id: "a".into(),
            bbox: BoundingBox::new(0, 0, 3, 4).unwrap(),
            label: "disc".into(),
        },
        GroundTruth {
            patch_id: "a".into(),
            bbox: BoundingBox::new(5, 6, 7, 8).unwrap(),
            label: "cross".into(),
        },
    ];
    let mut buf = Vec::new();
    write_annotations(&mut buf, &rows).unwrap();
    assert_eq!(read_annotations(buf.as_slice(), &P).unwrap(), rows);
}

fn scene_config(side: usize) -> SyntheticSceneConfig {
    SyntheticSceneConfig::new(7, PatchSpec::square(side).unwrap())
}

#[test]
fn scenes_are_deterministic() {
    let c = scene_config(64);
    let (a, b) = (generate_synthetic_scene(&c), generate_synthetic_scene(&c));
    assert_eq!(a.patch, b.patch);
    assert_eq!(a.ground_truth, b.ground_truth);
    assert_ne!(generate_synthetic_scene(&c.with_seed(8)).patch, a.patch);
}

#[test]
fn clean_scenes_have_no_ground_truth() {
    let c = scene_config(64).clean();
    assert!(generate_scenes(&c, 5, 20).iter().all(|s| s.ground_truth.is_empty()));
}

#[test]
fn single_object_box_is_its_mask_extent() {
    let mut c = scene_config(96);
    c.objects.size = (20, 40);
    for s in generate_scenes(&c, 9, 30) {
        assert_eq!(s.ground_truth.len(), 1);
        let g = &s.ground_truth[0];
        assert!((20..=40).contains(&g.bbox.width()) && (20..=40).contains(&g.bbox.height()), "{g:?}");
        let o = &s.objects[0];
        // independent extent of the mask
        let on: Vec<(usize, usize)> = (0..o.height)
            .flat_map(|y| (0..o.width).map(move |x| (x, y)))
            .filter(|&(x, y)| o.mask[y * o.width + x])
            .collect();
        let x0 = on.iter().map(|p| p.0).min().unwrap() + o.x;
        let x1 = on.iter().map(|p| p.0).max().unwrap() + o.x + 1;
        let y0 = on.iter().map(|p| p.1).min().unwrap() + o.y;
        let y1 = on.iter().map(|p| p.1).max().unwrap() + o.y + 1;
        assert_eq!(g.bbox, BoundingBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32).unwrap());
        assert_eq!(g.label, o.shape.label());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = scene_config(32);
    c.objects.size = (10, 40);
    assert!(c.validate().is_err());
    let mut c = scene_config(64);
    c.fraction_clean = 1.5;
    assert!(c.validate().is_err());
    let mut c = scene_config(64);
    c.objects.count = (3, 1);
    assert!(c.validate().is_err());
}

#[test]
fn dataset_is_bit_identical_for_a_fixed_seed() {
    let c = scene_config(32);
    let mut c = c;
    c.objects.size = (6, 12);
    c.fraction_clean = 0.3;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = build_dataset(&c, 5, 6, a.path()).unwrap();
    build_dataset(&c, 5, 6, b.path()).unwrap();
    assert_eq!(ma.split(Split::Train).count(), 5);
    assert_eq!(ma.split(Split::Test).count(), 6);
    for e in &ma.entries {
        let x = std::fs::read(a.path().join(&e.path)).unwrap();
        let y = std::fs::read(b.path().join(&e.path)).unwrap();
        assert_eq!(x, y, "{}", e.path);
    }
    for f in [MANIFEST_FILE, ANNOTATIONS_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let loaded = DatasetManifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.entries, ma.entries);
    let test = loaded.load_patches(Split::Test).unwrap();
    assert_eq!(test[0].0, "test_00000");
}

#[test]
fn empty_test_split_writes_header_only_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_dataset(&scene_config(32).clean(), 2, 0, dir.path()).unwrap();
    let text = std::fs::read_to_string(m.annotations_path()).unwrap();
    assert_eq!(text.trim_end(), ANNOTATION_HEADER.join(","));
}

#[test]
fn scene_seeds_differ_across_streams() {
    assert_ne!(scene_seed(1, streams::TRAIN, 0), scene_seed(1, streams::TEST, 0));
    assert_ne!(scene_seed(1, streams::TRAIN, 0), scene_seed(1, streams::TRAIN, 1));
    assert_eq!(scene_seed(1, 2, 3), scene_seed(1, 2, 3));
}

proptest! {
    #[test]
    fn resized_frames_are_exact_multiples(w in 16usize..120, h in 16usize..120, pw in 16usize..40, ph in 16usize..40) {
        prop_assume!(w >= pw && h >= ph);
        let spec = PatchSpec::new(pw, ph).unwrap();
        let r = resize_to_grid(&frame(w, h), &spec).unwrap();
        prop_assert_eq!(r.width() % pw, 0);
        prop_assert_eq!(r.height() % ph, 0);
        prop_assert!(r.width() <= w && w - r.width() < pw);
        let (rows, cols) = grid_shape(&r, &spec).unwrap();
        let patches = split_into_patches(&r, &spec).unwrap();
        prop_assert_eq!(assemble_patches(&patches, rows, cols, &spec).unwrap(), r.raster);
    }
}
