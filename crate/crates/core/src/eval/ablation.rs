use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{default_sweep_thresholds, evaluate, threshold_sweep, SweepCurve, DEFAULT_IOU_THRESHOLD};
use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::imaging::ImagePatch;
use crate::model::{Autoencoder, AutoencoderSpec};
use crate::pipeline::{analyze_patches, LocalizeConfig};
use crate::training::{reconstruction_mse, train_autoencoder, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub localize: LocalizeConfig,
    pub iou_threshold: f64,
    /// Median clean-patch mean difference above which a model is too weak.
    pub weak_delta: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            localize: LocalizeConfig::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            weak_delta: 0.2,
        }
    }
}

/// Shared data for every spec of an ablation.
#[derive(Clone, Debug, Default)]
pub struct AblationData {
    pub train: Vec<ImagePatch>,
    pub clean_test: Vec<ImagePatch>,
    pub fod_test: Vec<(String, ImagePatch)>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AblationOutcome {
    Scored(f64),
    /// Reconstructions too poor: clean patches already differ strongly.
    NoneWeak,
    /// Reconstructions too good: debris is reproduced, Otsu finds nothing.
    NoneStrong,
    Failed(String),
}

impl AblationOutcome {
    /// Table cell: percentage with one decimal, or the sentinel name.
    pub fn cell(&self) -> String {
        match self {
            AblationOutcome::Scored(r) => format!("{:.1}", r * 100.0),
            AblationOutcome::NoneWeak => "None-Weak".into(),
            AblationOutcome::NoneStrong => "None-Strong".into(),
            AblationOutcome::Failed(_) => "failed".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub outcome: AblationOutcome,
    /// Rate at the configured IoU threshold, even for sentinel rows.
    pub detection_rate: Option<f64>,
    /// Held-out clean reconstruction MSE.
    pub clean_mse: Option<f64>,
    pub median_clean_difference: Option<f64>,
    /// Share of debris patches whose Otsu outcome is Degenerate.
    pub degenerate_fraction: Option<f64>,
    /// Share of clean patches that produced a detection.
    pub clean_false_positive_rate: Option<f64>,
    pub sweep: Option<SweepCurve>,
}

impl AblationRow {
    fn failed(name: String, message: String) -> Self {
        AblationRow {
            name,
            outcome: AblationOutcome::Failed(message),
            detection_rate: None,
            clean_mse: None,
            median_clean_difference: None,
            degenerate_fraction: None,
            clean_false_positive_rate: None,
            sweep: None,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores an already trained model on the shared test data.
pub fn score_model(
    name: &str,
    model: &Autoencoder<f32>,
    data: &AblationData,
    cfg: &AblationConfig,
) -> Result<AblationRow> {
    let clean_mse = reconstruction_mse(model, &data.clean_test, cfg.localize.batch_size)?;
    let clean = analyze_patches(model, &data.clean_test, &cfg.localize)?;
    let median_clean = median(clean.iter().map(|a| a.difference.mean()).collect());
    let clean_fp = clean.iter().filter(|a| a.bbox.is_some()).count() as f64 / clean.len().max(1) as f64;

    let fod_patches: Vec<ImagePatch> = data.fod_test.iter().map(|(_, p)| p.clone()).collect();
    let fod = analyze_patches(model, &fod_patches, &cfg.localize)?;
    let degenerate = fod.iter().filter(|a| a.outcome.is_degenerate()).count() as f64 / fod.len().max(1) as f64;
    let detections: Vec<_> = fod
        .iter()
        .zip(&data.fod_test)
        .filter_map(|(a, (id, _))| a.detection(id))
        .collect();
    let rate = evaluate(&detections, &data.ground_truth, cfg.iou_threshold).detection_rate;
    let sweep = threshold_sweep(&detections, &data.ground_truth, &default_sweep_thresholds())?;

    let outcome = if degenerate > 0.5 {
        AblationOutcome::NoneStrong
    } else if median_clean > cfg.weak_delta {
        AblationOutcome::NoneWeak
    } else {
        AblationOutcome::Scored(rate)
    };
    Ok(AblationRow {
        name: name.to_string(),
        outcome,
        detection_rate: Some(rate),
        clean_mse: Some(clean_mse),
        median_clean_difference: Some(median_clean),
        degenerate_fraction: Some(degenerate),
        clean_false_positive_rate: Some(clean_fp),
        sweep: Some(sweep),
    })
}

/// Trains and scores every spec in order. A failing spec yields a
/// `Failed` row and the run continues.
pub fn run_ablation(specs: &[AutoencoderSpec], data: &AblationData, cfg: &AblationConfig) -> Vec<AblationRow> {
    specs
        .iter()
        .map(|spec| {
            let name = spec.name();
            train_autoencoder(&data.train, spec, &cfg.train)
                .and_then(|(model, _)| score_model(&name, &model, data, cfg))
                .unwrap_or_else(|e| {
                    log::warn!("ablation row {name} failed: {e}");
                    AblationRow::failed(name, e.to_string())
                })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Format(format!("writing ablation table: {e}"));
    w.write_record([
        "model",
        "detection_rate",
        "raw_detection_rate",
        "clean_mse",
        "median_clean_difference",
        "degenerate_fraction",
        "clean_false_positive_rate",
    ])
    .map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.outcome.cell(),
            opt(r.detection_rate),
            opt(r.clean_mse),
            opt(r.median_clean_difference),
            opt(r.degenerate_fraction),
            opt(r.clean_false_positive_rate),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing ablation table: {e}")))
}

pub fn save_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ablation_csv(std::io::BufWriter::new(f), rows)
}
