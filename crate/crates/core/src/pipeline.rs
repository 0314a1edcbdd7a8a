//! Inference: reconstruct, difference, threshold, box, and optionally classify.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{grid_shape, resize_to_grid, split_into_patches, Frame, PatchSpec};
use crate::error::{Error, Result};
use crate::imaging::{
    crop, difference_map, extreme_points, min_area_filter, otsu_threshold, ssim_map, stitch_segmentation,
    threshold_map, BoundingBox, DifferenceMap, GridPos, ImagePatch, OtsuOutcome, SegmentationMap,
};
use crate::model::{Autoencoder, Classifier};

pub const UNKNOWN_LABEL: &str = "unknown";
pub const DETECTION_HEADER: [&str; 8] = [
    "patch_id",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
    "mean_difference",
    "label",
    "score",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DifferenceBackend {
    /// Channel-mean absolute difference.
    Absolute,
    /// `(1 − SSIM) / 2` over a square window.
    Ssim { window: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    /// Histogram resolution for Otsu. Thresholds fall on multiples of
    /// `1 / otsu_bins`, so coarse bins act as a noise floor: a map whose
    /// values all stay within the first bin is Degenerate.
    pub otsu_bins: usize,
    /// Masks with fewer segmented pixels are treated as empty.
    pub min_area: usize,
    pub backend: DifferenceBackend,
    /// Patches per forward pass.
    pub batch_size: usize,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            otsu_bins: 5,
            min_area: 20,
            backend: DifferenceBackend::Absolute,
            batch_size: 16,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.otsu_bins < 2 {
            return Err(Error::Config("otsu_bins must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let DifferenceBackend::Ssim { window } = self.backend {
            if window < 3 || window % 2 == 0 {
                return Err(Error::Config(format!("SSIM window must be odd and >= 3, got {window}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub patch_id: String,
    pub bbox: BoundingBox,
    /// Mean of the difference map inside `bbox`.
    pub mean_difference: f64,
    pub label: Option<String>,
    pub score: Option<f64>,
    /// Grid cell for frame-level detections (box is then in frame pixels).
    #[serde(skip)]
    pub grid: Option<GridPos>,
}

/// Every intermediate of one patch's localization.
#[derive(Clone, Debug)]
pub struct PatchAnalysis {
    pub difference: DifferenceMap,
    pub outcome: OtsuOutcome,
    /// Segmentation after the area filter; empty when Degenerate.
    pub segmentation: SegmentationMap,
    pub bbox: Option<BoundingBox>,
}

impl PatchAnalysis {
    pub fn detection(&self, patch_id: &str) -> Option<Detection> {
        self.bbox.map(|b| Detection {
            patch_id: patch_id.to_string(),
            bbox: b,
            mean_difference: self.difference.mean_in(&b),
            label: None,
            score: None,
            grid: None,
        })
    }
}

/// Difference → Otsu → threshold → area filter → extreme points for a given
/// reconstruction.
pub fn analyze_reconstruction(
    original: &ImagePatch,
    reconstruction: &ImagePatch,
    cfg: &LocalizeConfig,
) -> Result<PatchAnalysis> {
    let difference = match cfg.backend {
        DifferenceBackend::Absolute => difference_map(original, reconstruction)?,
        DifferenceBackend::Ssim { window } => ssim_map(original, reconstruction, window)?,
    };
    let outcome = otsu_threshold(&difference, cfg.otsu_bins);
    let segmentation = match outcome {
        OtsuOutcome::Threshold(t) => min_area_filter(&threshold_map(&difference, t), cfg.min_area),
        OtsuOutcome::Degenerate => SegmentationMap::empty(difference.width(), difference.height()),
    };
    let bbox = extreme_points(&segmentation);
    Ok(PatchAnalysis {
        difference,
        outcome,
        segmentation,
        bbox,
    })
}

fn check_input(model: &Autoencoder<f32>, patch: &ImagePatch) -> Result<()> {
    let s = model.spec.input_size;
    if patch.width() != s.width || patch.height() != s.height {
        return Err(Error::Dimension(format!(
            "patch {}×{} does not match model input {}×{}",
            patch.width(),
            patch.height(),
            s.width,
            s.height
        )));
    }
    Ok(())
}

/// Analyses patches in batches; output order follows input order.
pub fn analyze_patches(
    model: &Autoencoder<f32>,
    patches: &[ImagePatch],
    cfg: &LocalizeConfig,
) -> Result<Vec<PatchAnalysis>> {
    cfg.validate()?;
    patches.iter().try_for_each(|p| check_input(model, p))?;
    let chunks: Vec<Result<Vec<PatchAnalysis>>> = patches
        .par_chunks(cfg.batch_size)
        .map(|chunk| {
            let recon = model.forward_many(chunk, chunk.len())?;
            chunk
                .iter()
                .zip(&recon)
                .map(|(p, r)| analyze_reconstruction(p, r, cfg))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(patches.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn localize_patch(
    model: &Autoencoder<f32>,
    patch: &ImagePatch,
    patch_id: &str,
    cfg: &LocalizeConfig,
) -> Result<Option<Detection>> {
    let a = analyze_patches(model, std::slice::from_ref(patch), cfg)?;
    Ok(a[0].detection(patch_id))
}

/// Localizes every `(patch_id, patch)` pair; at most one detection each.
pub fn localize_patches(
    model: &Autoencoder<f32>,
    patches: &[(String, ImagePatch)],
    cfg: &LocalizeConfig,
) -> Result<Vec<Option<Detection>>> {
    let raw: Vec<ImagePatch> = patches.iter().map(|(_, p)| p.clone()).collect();
    let analyses = analyze_patches(model, &raw, cfg)?;
    Ok(analyses
        .iter()
        .zip(patches)
        .map(|(a, (id, _))| a.detection(id))
        .collect())
}

/// Patch identifier used for frame grid cells.
pub fn cell_id(source_id: &str, pos: GridPos) -> String {
    format!("{source_id}_r{}_c{}", pos.row, pos.col)
}

/// Frame-level localization. Boxes are returned in the coordinates of the
/// grid-resized frame, in row-major cell order.
pub fn localize_frame(
    model: &Autoencoder<f32>,
    frame: &Frame,
    spec: &PatchSpec,
    cfg: &LocalizeConfig,
) -> Result<(Vec<Detection>, SegmentationMap)> {
    let resized = resize_to_grid(frame, spec)?;
    let (rows, cols) = grid_shape(&resized, spec)?;
    let patches = split_into_patches(&resized, spec)?;
    let analyses = analyze_patches(model, &patches, cfg)?;
    let mut detections = Vec::new();
    let mut cells = Vec::with_capacity(patches.len());
    for (patch, a) in patches.iter().zip(analyses) {
        let pos = patch.grid.expect("split patches carry grid positions");
        if let Some(mut d) = a.detection(&cell_id(&frame.source_id, pos)) {
            d.bbox = d.bbox.translate((pos.col * spec.width) as u32, (pos.row * spec.height) as u32);
            d.grid = Some(pos);
            detections.push(d);
        }
        cells.push((pos, a.segmentation));
    }
    let mask = stitch_segmentation(&cells, rows, cols, spec)?;
    Ok((detections, mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnknownPolicy {
    /// Scores strictly below this become "unknown".
    pub score_threshold: f64,
    pub save_dir: Option<PathBuf>,
}

impl Default for UnknownPolicy {
    fn default() -> Self {
        UnknownPolicy {
            score_threshold: 0.5,
            save_dir: None,
        }
    }
}

impl UnknownPolicy {
    pub fn new(score_threshold: f64) -> Result<Self> {
        let p = UnknownPolicy {
            score_threshold,
            save_dir: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_save_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.save_dir = Some(dir.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "unknown-score threshold must lie in [0, 1], got {}",
                self.score_threshold
            )));
        }
        Ok(())
    }
}

/// Crops and classifies each detection of `patch`. Boxes must be
/// patch-local. Unknown crops are written as `<patch_id>_<index>.png`;
/// a failed write only logs a warning.
pub fn classify_detections(
    classifier: &Classifier<f32>,
    patch: &ImagePatch,
    detections: &[Detection],
    policy: &UnknownPolicy,
) -> Result<Vec<Detection>> {
    policy.validate()?;
    let crops = detections
        .iter()
        .map(|d| crop(patch, &d.bbox).map(|c| c.raster))
        .collect::<Result<Vec<_>>>()?;
    let predictions = classifier.predict_batch(&crops)?;
    let mut out = Vec::with_capacity(detections.len());
    for (i, ((d, pred), raster)) in detections.iter().zip(predictions).zip(&crops).enumerate() {
        let unknown = pred.score < policy.score_threshold;
        if unknown {
            if let Some(dir) = &policy.save_dir {
                let path = dir.join(format!("{}_{i}.png", d.patch_id));
                let saved = std::fs::create_dir_all(dir)
                    .map_err(|e| Error::io(dir, e))
                    .and_then(|_| raster.save_png(&path));
                if let Err(e) = saved {
                    log::warn!("could not save unknown crop: {e}");
                }
            }
        }
        out.push(Detection {
            label: Some(if unknown { UNKNOWN_LABEL.to_string() } else { pred.label }),
            score: Some(pred.score),
            ..d.clone()
        });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(writer: W, detections: &[Detection]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(format!("writing detections: {e}"));
    w.write_record(DETECTION_HEADER).map_err(csv_err)?;
    for d in detections {
        let b = d.bbox;
        w.write_record([
            d.patch_id.clone(),
            b.x_min.to_string(),
            b.y_min.to_string(),
            b.x_max.to_string(),
            b.y_max.to_string(),
            format!("{:.6}", d.mean_difference),
            d.label.clone().unwrap_or_default(),
            d.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing detections: {e}")))
}

pub fn save_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_detections(std::io::BufWriter::new(f), detections)
}

/// Parses a detection report; row numbers in errors count the header as 1.
pub fn read_detections<R: Read>(reader: R) -> Result<Vec<Detection>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().ne(DETECTION_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", DETECTION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let num = |k: usize| {
            field(k).parse::<u32>().map_err(|_| Error::Parse {
                line,
                message: format!("{} is not an unsigned integer: {:?}", DETECTION_HEADER[k], field(k)),
            })
        };
        let real = |k: usize| {
            field(k).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{} is not a number: {:?}", DETECTION_HEADER[k], field(k)),
            })
        };
        let bbox = BoundingBox::new(num(1)?, num(2)?, num(3)?, num(4)?).map_err(|_| Error::Validation {
            line,
            message: "box must satisfy x_min < x_max and y_min < y_max".into(),
        })?;
        let label = Some(field(6).to_string()).filter(|s| !s.is_empty());
        let score = if field(7).is_empty() { None } else { Some(real(7)?) };
        if label.is_some() != score.is_some() {
            return Err(Error::Validation {
                line,
                message: "label and score must be both present or both absent".into(),
            });
        }
        out.push(Detection {
            patch_id: field(0).to_string(),
            bbox,
            mean_difference: real(5)?,
            label,
            score,
            grid: None,
        });
    }
    Ok(out)
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections(f)
}

#[cfg(test)]
mod tests;
