//! The `fodloc` command line.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{ClassifierConfig, DataConfig, EvalConfig, ModelConfig, RunConfig};

use crate::data::{build_dataset, load_annotations, load_frame, resize_to_grid, DatasetManifest, GroundTruth, Split, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, run_ablation, save_ablation_csv, threshold_sweep, AblationData};
use crate::imaging::{crop, raster_from_image, ImagePatch};
use crate::model::{load_autoencoder, load_classifier, save_autoencoder, save_classifier, Autoencoder};
use crate::pipeline::{
    classify_detections, localize_frame, localize_patch, save_detections, load_detections, Detection, UNKNOWN_LABEL,
};
use crate::training::{train_autoencoder, train_classifier, LabeledCrop};

pub const RUN_DIR_ENV: &str = "FODLOC_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "fodloc", version, about = "Debris localization on pavement imagery with reconstruction autoencoders")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for patch-parallel inference.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory receiving the resolved config and logs.
    #[arg(long, global = true, env = RUN_DIR_ENV, default_value = "runs")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (manifest, annotations, PNG patches, object crops).
    GenData {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        out: PathBuf,
    },
    /// Train an autoencoder on the clean training split.
    Train {
        /// Dataset directory (containing manifest.csv).
        #[arg(long)]
        dataset: PathBuf,
        /// Model overrides, e.g. `depth=3,vit=outer,skips=false`.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Output directory for `autoencoder.ckpt` and `metrics.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the crop classifier on `<dir>/<label>/*.png`.
    TrainClassifier {
        #[arg(long)]
        crops: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize debris in patches or full frames.
    Localize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory of images.
        #[arg(long)]
        input: PathBuf,
        /// Optional classifier checkpoint for labelling detections.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        otsu_bins: Option<usize>,
        #[arg(long)]
        min_area: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a directory of crops.
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        crops: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        /// Where unknown crops are copied.
        #[arg(long)]
        unknown_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection rate of a detection CSV against annotations.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection rate over a range of IoU thresholds.
    Sweep {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score every configured architecture on one dataset.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments, runs the command and maps errors to a nonzero exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.set_seed(s);
    }
    apply_overrides(&mut cfg, &cli.command)?;
    cfg.validate()?;
    if let Some(j) = cli.global.jobs {
        // a pool may already exist when called twice in one process
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    echo_config(&cli.global.run_dir, &cfg)?;

    match cli.command {
        Command::GenData { out, .. } => cmd_gen_data(&cfg, &out),
        Command::Train { dataset, out, .. } => cmd_train(&cfg, &dataset, &out),
        Command::TrainClassifier { crops, out, .. } => cmd_train_classifier(&cfg, &crops, &out),
        Command::Localize {
            checkpoint,
            input,
            classifier,
            out,
            ..
        } => cmd_localize(&cfg, &checkpoint, &input, classifier.as_deref(), &out),
        Command::Classify {
            checkpoint,
            crops,
            unknown_dir,
            out,
            ..
        } => cmd_classify(&cfg, &checkpoint, &crops, unknown_dir.as_deref(), &out),
        Command::Evaluate {
            detections,
            annotations,
            out,
            ..
        } => cmd_evaluate(&cfg, &detections, &annotations, out.as_deref()),
        Command::Sweep {
            detections,
            annotations,
            out,
        } => cmd_sweep(&cfg, &detections, &annotations, &out),
        Command::Ablate { dataset, out, .. } => cmd_ablate(&cfg, &dataset, &out),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenData {
            train,
            test,
            patch_size,
            ..
        } => {
            cfg.data.n_train = train.unwrap_or(cfg.data.n_train);
            cfg.data.n_test = test.unwrap_or(cfg.data.n_test);
            cfg.data.patch_size = patch_size.unwrap_or(cfg.data.patch_size);
        }
        Command::Train {
            spec,
            epochs,
            batch_size,
            lr,
            ..
        } => {
            if let Some(s) = spec {
                cfg.model.apply_overrides(s)?;
            }
            cfg.training.epochs = epochs.unwrap_or(cfg.training.epochs);
            cfg.training.batch_size = batch_size.unwrap_or(cfg.training.batch_size);
            cfg.training.learning_rate = lr.unwrap_or(cfg.training.learning_rate);
        }
        Command::TrainClassifier { epochs, .. } => {
            cfg.classifier.training.epochs = epochs.unwrap_or(cfg.classifier.training.epochs);
        }
        Command::Localize {
            tau,
            otsu_bins,
            min_area,
            ..
        } => {
            cfg.classifier.unknown_threshold = tau.unwrap_or(cfg.classifier.unknown_threshold);
            cfg.pipeline.otsu_bins = otsu_bins.unwrap_or(cfg.pipeline.otsu_bins);
            cfg.pipeline.min_area = min_area.unwrap_or(cfg.pipeline.min_area);
        }
        Command::Classify { tau, .. } => {
            cfg.classifier.unknown_threshold = tau.unwrap_or(cfg.classifier.unknown_threshold);
        }
        Command::Evaluate { iou, .. } => {
            cfg.eval.iou_threshold = iou.unwrap_or(cfg.eval.iou_threshold);
        }
        Command::Ablate { epochs, .. } => {
            cfg.training.epochs = epochs.unwrap_or(cfg.training.epochs);
        }
        Command::Sweep { .. } => {}
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(run_dir: &Path, cfg: &RunConfig) -> Result<()> {
    create_dir(run_dir)?;
    let path = run_dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Image files under `input` (itself, if a file), sorted by path.
fn list_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = build_dataset(&cfg.scene_config()?, cfg.data.n_train, cfg.data.n_test, out)?;
    let patch = cfg.patch()?;
    let gts = load_annotations(&manifest.annotations_path(), &patch)?;
    let test: BTreeMap<String, ImagePatch> = manifest.load_patches(Split::Test)?.into_iter().collect();
    let mut per_patch: BTreeMap<&str, usize> = BTreeMap::new();
    for g in &gts {
        let k = per_patch.entry(&g.patch_id).or_default();
        let dir = out.join("crops").join(&g.label);
        create_dir(&dir)?;
        crop(&test[&g.patch_id], &g.bbox)?
            .raster
            .save_png(&dir.join(format!("{}_{k}.png", g.patch_id)))?;
        *k += 1;
    }
    log::info!(
        "wrote {} patches and {} annotations to {}",
        manifest.entries.len(),
        gts.len(),
        out.display()
    );
    Ok(())
}

fn load_manifest(dataset: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(&dataset.join(MANIFEST_FILE))
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(dataset)?;
    let train: Vec<ImagePatch> = manifest.load_patches(Split::Train)?.into_iter().map(|(_, p)| p).collect();
    let spec = cfg.autoencoder_spec()?;
    let (model, history) = train_autoencoder(&train, &spec, &cfg.training)?;
    create_dir(out)?;
    save_autoencoder(&model, &out.join("autoencoder.ckpt"))?;
    history.save_csv(&out.join("metrics.csv"))?;
    log::info!("saved {} (best epoch {:?})", spec.name(), history.best_epoch);
    Ok(())
}

/// Reads `<dir>/<label>/*.png`; labels are the sorted subdirectory names.
pub fn load_labeled_crops(dir: &Path) -> Result<(Vec<LabeledCrop>, Vec<String>)> {
    let mut labels: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    labels.sort();
    let mut crops = Vec::new();
    for (class, label) in labels.iter().enumerate() {
        for p in list_images(&dir.join(label))? {
            crops.push(LabeledCrop {
                raster: raster_from_image(&p)?,
                class,
            });
        }
    }
    Ok((crops, labels))
}

pub fn cmd_train_classifier(cfg: &RunConfig, crops_dir: &Path, out: &Path) -> Result<()> {
    let (crops, labels) = load_labeled_crops(crops_dir)?;
    let (model, history) = train_classifier(&crops, &labels, cfg.classifier.input_size, &cfg.classifier.training)?;
    create_dir(out)?;
    save_classifier(&model, &out.join("classifier.ckpt"))?;
    history.save_csv(&out.join("metrics.csv"))?;
    Ok(())
}

fn localize_image(cfg: &RunConfig, model: &Autoencoder<f32>, path: &Path, out: &Path) -> Result<(ImagePatch, Vec<Detection>)> {
    let input = model.spec.input_size;
    let frame = load_frame(path)?;
    if frame.width() == input.width && frame.height() == input.height {
        let patch = ImagePatch::new(frame.raster);
        let det = localize_patch(model, &patch, &frame.source_id, &cfg.pipeline)?;
        Ok((patch, det.into_iter().collect()))
    } else {
        let (dets, mask) = localize_frame(model, &frame, &input, &cfg.pipeline)?;
        mask.save_png(&out.join(format!("{}_mask.png", frame.source_id)))?;
        let resized = resize_to_grid(&frame, &input)?;
        Ok((ImagePatch::new(resized.raster), dets))
    }
}

pub fn cmd_localize(cfg: &RunConfig, checkpoint: &Path, input: &Path, classifier: Option<&Path>, out: &Path) -> Result<()> {
    let model = load_autoencoder(checkpoint)?;
    let classifier = classifier.map(load_classifier).transpose()?;
    let policy = cfg.unknown_policy()?.with_save_dir(out.join(UNKNOWN_LABEL));
    create_dir(out)?;
    let mut all = Vec::new();
    for path in list_images(input)? {
        let (patch, dets) = localize_image(cfg, &model, &path, out)?;
        let dets = match &classifier {
            Some(c) if !dets.is_empty() => classify_detections(c, &patch, &dets, &policy)?,
            _ => dets,
        };
        all.extend(dets);
    }
    save_detections(&out.join("detections.csv"), &all)?;
    log::info!("{} detections written to {}", all.len(), out.display());
    Ok(())
}

pub fn cmd_classify(cfg: &RunConfig, checkpoint: &Path, crops: &Path, unknown_dir: Option<&Path>, out: &Path) -> Result<()> {
    let model = load_classifier(checkpoint)?;
    let tau = cfg.unknown_policy()?.score_threshold;
    let paths = list_images(crops)?;
    let rasters = paths.iter().map(|p| raster_from_image(p)).collect::<Result<Vec<_>>>()?;
    let preds = model.predict_batch(&rasters)?;
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Format(format!("{}: {e}", out.display())))?;
    let err = |e: csv::Error| Error::Format(format!("writing classifications: {e}"));
    w.write_record(["path", "label", "score"]).map_err(err)?;
    for ((p, r), pred) in paths.iter().zip(&rasters).zip(preds) {
        let unknown = pred.score < tau;
        if let (true, Some(dir)) = (unknown, unknown_dir) {
            create_dir(dir)?;
            if let Err(e) = r.save_png(&dir.join(format!("{}.png", stem(p)))) {
                log::warn!("could not save unknown crop: {e}");
            }
        }
        let label = if unknown { UNKNOWN_LABEL.to_string() } else { pred.label };
        w.write_record([p.display().to_string(), label, format!("{:.6}", pred.score)]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

/// Annotations are read without a patch-size check: frame-level reports
/// carry frame coordinates.
fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let big = crate::data::PatchSpec::new(u32::MAX as usize, u32::MAX as usize)?;
    load_annotations(path, &big)
}

pub fn cmd_evaluate(cfg: &RunConfig, detections: &Path, annotations: &Path, out: Option<&Path>) -> Result<()> {
    let report = evaluate(&load_detections(detections)?, &load_ground_truth(annotations)?, cfg.eval.iou_threshold);
    match out {
        Some(p) => report.save_csv(p)?,
        None => report
            .write_csv(std::io::stdout().lock())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    log::info!(
        "detection rate {:.4} ({} / {}) at IoU > {}",
        report.detection_rate,
        report.n_correct,
        report.n_ground_truth,
        report.iou_threshold
    );
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, detections: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let curve = threshold_sweep(
        &load_detections(detections)?,
        &load_ground_truth(annotations)?,
        &cfg.eval.sweep_thresholds,
    )?;
    curve.save(out)
}

/// Train patches, test patches split by whether they carry annotations.
pub fn ablation_data(manifest: &DatasetManifest, patch: &crate::data::PatchSpec) -> Result<AblationData> {
    let train = manifest.load_patches(Split::Train)?.into_iter().map(|(_, p)| p).collect();
    let ground_truth = load_annotations(&manifest.annotations_path(), patch)?;
    let (mut clean_test, mut fod_test) = (Vec::new(), Vec::new());
    for (id, p) in manifest.load_patches(Split::Test)? {
        if ground_truth.iter().any(|g| g.patch_id == id) {
            fod_test.push((id, p));
        } else {
            clean_test.push(p);
        }
    }
    Ok(AblationData {
        train,
        clean_test,
        fod_test,
        ground_truth,
    })
}

pub fn cmd_ablate(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(dataset)?;
    let data = ablation_data(&manifest, &cfg.patch()?)?;
    let rows = run_ablation(&cfg.ablation_specs()?, &data, &cfg.ablation_config());
    save_ablation_csv(out, &rows)
}
