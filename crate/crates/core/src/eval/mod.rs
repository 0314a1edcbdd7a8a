//! Detection scoring, IoU-threshold sweeps and the architecture ablation.

mod ablation;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ablation::{
    run_ablation, save_ablation_csv, score_model, write_ablation_csv, AblationConfig, AblationData, AblationOutcome, AblationRow,
};

use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::imaging::BoundingBox;
use crate::model::Classifier;
use crate::pipeline::Detection;
use crate::training::LabeledCrop;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

/// Intersection over union of two half-open boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min)) as u64;
    let ih = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min)) as u64;
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// One-to-one assignment between predictions and ground truths of a patch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(prediction, ground_truth, iou)`, each with `iou > threshold`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub missed_ground_truths: Vec<usize>,
}

impl Matching {
    pub fn n_correct(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy matching in descending IoU order (ties by prediction, then
/// ground-truth index). A pair is accepted only when its IoU is strictly
/// above `iou_threshold`.
pub fn match_detections(preds: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> Matching {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v > iou_threshold {
                candidates.push((i, j, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (i, j, v) in candidates {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, v));
        }
    }
    Matching {
        pairs,
        unmatched_predictions: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        missed_ground_truths: (0..gts.len()).filter(|&j| !gt_used[j]).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchMatch {
    pub patch_id: String,
    pub n_ground_truth: usize,
    pub n_predictions: usize,
    pub n_correct: usize,
    pub false_positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub n_ground_truth: usize,
    pub n_correct: usize,
    pub detection_rate: f64,
    /// No ground truths at all; the rate is then 0 by convention.
    pub empty: bool,
    /// Reported alongside, not part of the rate.
    pub false_positives: usize,
    pub patches: Vec<PatchMatch>,
}

impl EvalReport {
    pub fn from_counts(n_correct: usize, n_ground_truth: usize, iou_threshold: f64) -> Self {
        EvalReport {
            iou_threshold,
            n_ground_truth,
            n_correct,
            detection_rate: if n_ground_truth == 0 {
                0.0
            } else {
                n_correct as f64 / n_ground_truth as f64
            },
            empty: n_ground_truth == 0,
            false_positives: 0,
            patches: Vec::new(),
        }
    }

    /// Summary row followed by per-patch rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iou_threshold,n_ground_truth,n_correct,detection_rate,false_positives")?;
        writeln!(
            w,
            "{},{},{},{:.6},{}",
            self.iou_threshold, self.n_ground_truth, self.n_correct, self.detection_rate, self.false_positives
        )?;
        writeln!(w)?;
        writeln!(w, "patch_id,n_ground_truth,n_predictions,n_correct,false_positives")?;
        for p in &self.patches {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.patch_id, p.n_ground_truth, p.n_predictions, p.n_correct, p.false_positives
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Aggregates per-patch match records.
pub fn detection_rate(records: &[PatchMatch], iou_threshold: f64) -> EvalReport {
    let n_gt = records.iter().map(|r| r.n_ground_truth).sum();
    let n_correct = records.iter().map(|r| r.n_correct).sum();
    EvalReport {
        false_positives: records.iter().map(|r| r.false_positives).sum(),
        patches: records.to_vec(),
        ..EvalReport::from_counts(n_correct, n_gt, iou_threshold)
    }
}

/// Groups predictions and ground truths by `patch_id` and matches each patch.
/// Patches appear in the report in sorted id order.
pub fn evaluate(preds: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> EvalReport {
    let mut by_patch: BTreeMap<&str, (Vec<BoundingBox>, Vec<BoundingBox>)> = BTreeMap::new();
    for p in preds {
        by_patch.entry(&p.patch_id).or_default().0.push(p.bbox);
    }
    for g in gts {
        by_patch.entry(&g.patch_id).or_default().1.push(g.bbox);
    }
    let records: Vec<PatchMatch> = by_patch
        .into_iter()
        .map(|(id, (p, g))| {
            let m = match_detections(&p, &g, iou_threshold);
            PatchMatch {
                patch_id: id.to_string(),
                n_ground_truth: g.len(),
                n_predictions: p.len(),
                n_correct: m.n_correct(),
                false_positives: m.unmatched_predictions.len(),
            }
        })
        .collect();
    detection_rate(&records, iou_threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    /// `(iou_threshold, detection_rate)`, thresholds strictly increasing.
    pub points: Vec<(f64, f64)>,
}

impl SweepCurve {
    pub fn is_non_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    /// Two whitespace-separated columns, one point per line.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# iou_threshold detection_rate")?;
        for (t, r) in &self.points {
            writeln!(w, "{t:.4} {r:.6}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_table(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// `0.1, 0.2, ..., 0.9`
pub fn default_sweep_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub fn threshold_sweep(preds: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> Result<SweepCurve> {
    if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::Config("sweep thresholds must lie in (0, 1)".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep thresholds must be strictly increasing".into()));
    }
    Ok(SweepCurve {
        points: thresholds
            .iter()
            .map(|&t| (t, evaluate(preds, gts, t).detection_rate))
            .collect(),
    })
}

/// Fraction of crops whose argmax class matches the label.
pub fn classifier_accuracy(model: &Classifier<f32>, crops: &[LabeledCrop]) -> Result<f64> {
    if crops.is_empty() {
        return Err(Error::Data("accuracy of an empty crop set is undefined".into()));
    }
    let mut correct = 0usize;
    for chunk in crops.chunks(32) {
        let rasters: Vec<_> = chunk.iter().map(|c| c.raster.clone()).collect();
        let preds = model.predict_batch(&rasters)?;
        correct += preds.iter().zip(chunk).filter(|(p, c)| p.class == c.class).count();
    }
    Ok(correct as f64 / crops.len() as f64)
}

#[cfg(test)]
mod tests;
