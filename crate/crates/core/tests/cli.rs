use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use fodloc::cli::{run, Cli, ModelConfig, RunConfig};
use fodloc::data::{load_annotations, DatasetManifest, PatchSpec, Split};
use fodloc::model::VitPlacement;
use fodloc::pipeline::load_detections;

const SMALL: &str = r#"
seed = 3

[data]
patch_size = 64
n_train = 12
n_test = 8
fraction_clean = 0.25

[data.objects]
count = [1, 1]
size = [8, 20]
shapes = ["rectangle", "disc"]
color_range = [0.0, 1.0]
min_contrast = 0.25

[model]
depth = 1
base_channels = 2

[training]
epochs = 1
batch_size = 4

[classifier]
input_size = 16

[classifier.training]
epochs = 1
batch_size = 4

[eval]
ablation_specs = ["depth=1", "depth=2"]
"#;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("run.toml"), SMALL).unwrap();
        Workspace { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn run(&self, args: &[&str]) -> fodloc::Result<()> {
        let config = self.p("run.toml");
        let run_dir = self.p("runs");
        let mut argv = vec![
            "fodloc".to_string(),
            "--config".into(),
            config.display().to_string(),
            "--run-dir".into(),
            run_dir.display().to_string(),
        ];
        argv.extend(args.iter().map(|s| s.to_string()));
        run(Cli::try_parse_from(argv).expect("arguments parse"))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn gen_data_is_deterministic_and_complete() {
    let ws = Workspace::new();
    let (a, b) = (ws.p("a"), ws.p("b"));
    ws.run(&["gen-data", s(&a)]).unwrap();
    ws.run(&["gen-data", s(&b)]).unwrap();
    assert_eq!(file_bytes(&a), file_bytes(&b));

    let m = DatasetManifest::load(&a.join("manifest.csv")).unwrap();
    assert_eq!(m.split(Split::Train).count(), 12);
    assert_eq!(m.split(Split::Test).count(), 8);
    let gts = load_annotations(&m.annotations_path(), &PatchSpec::square(64).unwrap()).unwrap();
    assert!(!gts.is_empty());
    assert!(a.join("crops").is_dir());
    assert!(ws.p("runs/config.resolved.toml").exists());
}

#[test]
fn gen_data_with_empty_test_split() {
    let ws = Workspace::new();
    ws.run(&["gen-data", "--test", "0", s(&ws.p("d"))]).unwrap();
    let m = DatasetManifest::load(&ws.p("d/manifest.csv")).unwrap();
    assert_eq!(m.split(Split::Test).count(), 0);
    let ann = std::fs::read_to_string(ws.p("d/annotations.csv")).unwrap();
    assert_eq!(ann.lines().count(), 1);
}

#[test]
fn full_workflow_through_the_cli() {
    let ws = Workspace::new();
    let data = ws.p("data");
    ws.run(&["gen-data", s(&data)]).unwrap();
    ws.run(&["train", "--dataset", s(&data), "--out", s(&ws.p("model"))]).unwrap();
    let metrics = std::fs::read_to_string(ws.p("model/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_loss"));
    assert_eq!(metrics.lines().count(), 2);

    ws.run(&[
        "train-classifier",
        "--crops",
        s(&data.join("crops")),
        "--out",
        s(&ws.p("cls")),
    ])
    .unwrap();

    ws.run(&[
        "localize",
        "--checkpoint",
        s(&ws.p("model/autoencoder.ckpt")),
        "--input",
        s(&data.join("test")),
        "--classifier",
        s(&ws.p("cls/classifier.ckpt")),
        "--tau",
        "1.0",
        "--out",
        s(&ws.p("loc")),
    ])
    .unwrap();
    let dets = load_detections(&ws.p("loc/detections.csv")).unwrap();
    assert!(dets.iter().all(|d| d.label.as_deref() == Some("unknown")));

    ws.run(&[
        "evaluate",
        "--detections",
        s(&ws.p("loc/detections.csv")),
        "--annotations",
        s(&data.join("annotations.csv")),
        "--out",
        s(&ws.p("eval.csv")),
    ])
    .unwrap();
    assert!(std::fs::read_to_string(ws.p("eval.csv")).unwrap().contains("detection_rate"));

    ws.run(&[
        "sweep",
        "--detections",
        s(&ws.p("loc/detections.csv")),
        "--annotations",
        s(&data.join("annotations.csv")),
        "--out",
        s(&ws.p("sweep.txt")),
    ])
    .unwrap();
    let sweep = std::fs::read_to_string(ws.p("sweep.txt")).unwrap();
    assert_eq!(sweep.lines().filter(|l| !l.starts_with('#')).count(), 9);

    ws.run(&[
        "classify",
        "--checkpoint",
        s(&ws.p("cls/classifier.ckpt")),
        "--crops",
        s(&walk(&data.join("crops"))[0].parent().unwrap().to_path_buf()),
        "--tau",
        "0",
        "--out",
        s(&ws.p("labels.csv")),
    ])
    .unwrap();
    let labels = std::fs::read_to_string(ws.p("labels.csv")).unwrap();
    assert!(labels.starts_with("path,label,score"));
    assert!(!labels.contains(",unknown,"));

    ws.run(&["ablate", "--dataset", s(&data), "--out", s(&ws.p("ablation.csv"))]).unwrap();
    let table = std::fs::read_to_string(ws.p("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn frame_input_writes_a_stitched_mask() {
    let ws = Workspace::new();
    let data = ws.p("data");
    ws.run(&["gen-data", "--test", "1", s(&data)]).unwrap();
    ws.run(&["train", "--dataset", s(&data), "--out", s(&ws.p("model"))]).unwrap();
    let frame = fodloc::imaging::Raster::filled(150, 100, [0.4, 0.4, 0.4]);
    frame.save_png(&ws.p("frame.png")).unwrap();
    ws.run(&[
        "localize",
        "--checkpoint",
        s(&ws.p("model/autoencoder.ckpt")),
        "--input",
        s(&ws.p("frame.png")),
        "--out",
        s(&ws.p("loc")),
    ])
    .unwrap();
    let mask = fodloc::imaging::SegmentationMap::load_png(&ws.p("loc/frame_mask.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (128, 64));
}

#[test]
fn invalid_configuration_is_rejected_before_work_starts() {
    let ws = Workspace::new();
    let bad = ws.p("bad.toml");
    std::fs::write(&bad, "[training]\nbatch_size = 0\n").unwrap();
    let never = ws.p("never");
    let runs = ws.p("runs");
    let argv = ["fodloc", "--config", s(&bad), "--run-dir", s(&runs), "gen-data", s(&never)];
    assert!(run(Cli::try_parse_from(argv).unwrap()).is_err());
    assert!(!ws.p("never").exists());

    let err = ws.run(&["train", "--dataset", s(&ws.p("x")), "--spec", "depth=3,vit=sideways", "--out", "o"]);
    assert!(matches!(err, Err(fodloc::Error::Config(_))));
}

#[test]
fn binary_exits_nonzero_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_fodloc"))
        .args(["--run-dir", s(&dir.path().join("runs")), "evaluate", "--detections"])
        .arg(dir.path().join("missing.csv"))
        .arg("--annotations")
        .arg(dir.path().join("missing.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn spec_overrides() {
    let mut m = ModelConfig::default();
    m.apply_overrides("depth=4, vit=inner,skips=true,base=6").unwrap();
    assert_eq!((m.depth, m.vit_placement, m.skip_connections, m.base_channels), (4, VitPlacement::Inner, true, 6));
    assert!(m.apply_overrides("depth").is_err());
    assert!(m.apply_overrides("depth=x").is_err());
    assert!(m.apply_overrides("colour=red").is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default();
    cfg.set_seed(99);
    cfg.model.depth = 4;
    let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.training.seed, 99);
    let partial: RunConfig = toml::from_str("[model]\ndepth = 2\n").unwrap();
    assert_eq!(partial.model.depth, 2);
    assert_eq!(partial.data, RunConfig::default().data);
    partial.validate().unwrap();
}
