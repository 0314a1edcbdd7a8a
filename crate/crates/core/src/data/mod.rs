//! Frame ingestion, grid patching, annotation CSVs and the synthetic
//! pavement-scene generator.

mod annotations;
mod dataset;
mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use annotations::{load_annotations, read_annotations, write_annotations, GroundTruth, ANNOTATION_HEADER};
pub use dataset::{build_dataset, scene_seed, streams, DatasetManifest, ManifestEntry, Split, ANNOTATIONS_FILE, MANIFEST_FILE};
pub use synthetic::{
    generate_scenes, generate_synthetic_scene, ObjectParams, Shape, SyntheticScene, SyntheticSceneConfig,
    TextureParams,
};

use crate::error::{Error, Result};
use crate::imaging::{raster_from_image, ImagePatch, Raster};

/// Patch width `N` and height `M` in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub width: usize,
    pub height: usize,
}

impl PatchSpec {
    pub const MIN_SIDE: usize = 16;

    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::Config(format!(
                "patch sides must be >= {}, got {width}×{height}",
                Self::MIN_SIDE
            )));
        }
        Ok(PatchSpec { width, height })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    /// The 448×448 patch used for the field imagery.
    pub fn field() -> Self {
        PatchSpec {
            width: 448,
            height: 448,
        }
    }
}

/// A raw RGB frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub raster: Raster,
    pub source_id: String,
}

impl Frame {
    pub fn new(raster: Raster, source_id: impl Into<String>) -> Self {
        Frame {
            raster,
            source_id: source_id.into(),
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

/// Decodes a PNG or JPEG into a `[0, 1]` frame. Only 3-channel images are accepted.
pub fn load_frame(path: &Path) -> Result<Frame> {
    let raster = raster_from_image(path)?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Frame::new(raster, source_id))
}

/// Bilinearly resizes to the largest whole multiple of the patch size in
/// each dimension (3840×2160 → 3584×1792 for 448-pixel patches).
pub fn resize_to_grid(frame: &Frame, spec: &PatchSpec) -> Result<Frame> {
    if frame.width() < spec.width || frame.height() < spec.height {
        return Err(Error::Size(format!(
            "frame {}×{} smaller than one {}×{} patch",
            frame.width(),
            frame.height(),
            spec.width,
            spec.height
        )));
    }
    let w = frame.width() / spec.width * spec.width;
    let h = frame.height() / spec.height * spec.height;
    Ok(Frame::new(frame.raster.resize_bilinear(w, h), frame.source_id.clone()))
}

/// Grid shape `(rows, cols)` of a frame whose sides are exact multiples.
pub fn grid_shape(frame: &Frame, spec: &PatchSpec) -> Result<(usize, usize)> {
    if frame.width() % spec.width != 0 || frame.height() % spec.height != 0 {
        return Err(Error::Size(format!(
            "frame {}×{} is not a multiple of {}×{}; resize to the grid first",
            frame.width(),
            frame.height(),
            spec.width,
            spec.height
        )));
    }
    Ok((frame.height() / spec.height, frame.width() / spec.width))
}

/// Non-overlapping patches in row-major grid order.
pub fn split_into_patches(frame: &Frame, spec: &PatchSpec) -> Result<Vec<ImagePatch>> {
    let (rows, cols) = grid_shape(frame, spec)?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let win = frame
                .raster
                .window(c * spec.width, r * spec.height, spec.width, spec.height);
            out.push(ImagePatch::at(win, r, c));
        }
    }
    Ok(out)
}

/// Inverse of [`split_into_patches`].
pub fn assemble_patches(patches: &[ImagePatch], rows: usize, cols: usize, spec: &PatchSpec) -> Result<Raster> {
    if patches.len() != rows * cols {
        return Err(Error::Completeness(format!(
            "{} patches for a {rows}×{cols} grid",
            patches.len()
        )));
    }
    let mut out = Raster::filled(cols * spec.width, rows * spec.height, [0.0; 3]);
    for (i, p) in patches.iter().enumerate() {
        let pos = p.grid.unwrap_or(crate::imaging::GridPos {
            row: i / cols,
            col: i % cols,
        });
        if p.width() != spec.width || p.height() != spec.height {
            return Err(Error::Dimension("patch size differs from spec".into()));
        }
        out.paste(&p.raster, pos.col * spec.width, pos.row * spec.height);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
