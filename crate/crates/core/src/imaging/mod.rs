//! Pixel-level primitives: difference maps, thresholding, extreme-point boxes,
//! cropping and mosaic stitching.

mod otsu;
mod raster;
mod ssim;

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use otsu::{bin_index, histogram, otsu_from_histogram, otsu_threshold, OtsuOutcome, DEFAULT_BINS};
pub use raster::{raster_from_image, GridPos, ImagePatch, Raster, CHANNELS};
pub use ssim::ssim_map;

use crate::data::PatchSpec;
use crate::error::{Error, Result};

/// Half-open integer box `[x_min, x_max) × [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::Validation {
                line: 0,
                message: format!("degenerate box ({x_min},{y_min},{x_max},{y_max})"),
            });
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max as usize <= width && self.y_max as usize <= height
    }

    pub fn translate(&self, dx: u32, dy: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Single-channel map of per-pixel reconstruction differences in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DifferenceMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "difference map {width}×{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("difference value {v} outside [0, 1]")));
        }
        Ok(DifferenceMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Mean value inside `b`.
    pub fn mean_in(&self, b: &BoundingBox) -> f64 {
        let mut s = 0.0;
        for y in b.y_min as usize..b.y_max as usize {
            for x in b.x_min as usize..b.x_max as usize {
                s += self.get(x, y) as f64;
            }
        }
        s / b.area() as f64
    }
}

/// Binary mask; `threshold_used` is `None` for masks that did not come
/// straight out of [`threshold_map`].
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    pub threshold_used: Option<f32>,
}

impl SegmentationMap {
    pub fn empty(width: usize, height: usize) -> Self {
        SegmentationMap {
            width,
            height,
            mask: vec![false; width * height],
            threshold_used: None,
        }
    }

    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask {width}×{height} needs {} values, got {}",
                width * height,
                mask.len()
            )));
        }
        Ok(SegmentationMap {
            width,
            height,
            mask,
            threshold_used: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Writes a 1-bit grayscale PNG (white = segmented).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let png_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&packed).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| raster::image_error(path, e))?.to_luma8();
        let mask = img.as_raw().iter().map(|&v| v >= 128).collect();
        Self::from_mask(img.width() as usize, img.height() as usize, mask)
    }
}

/// Pixels of a patch inside a localized box.
#[derive(Clone, Debug, PartialEq)]
pub struct CroppedLocalization {
    pub raster: Raster,
    pub source: BoundingBox,
}

/// Per-pixel absolute difference, averaged over the three channels.
pub fn difference_map(original: &ImagePatch, reconstruction: &ImagePatch) -> Result<DifferenceMap> {
    let (a, b) = (&original.raster, &reconstruction.raster);
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "patch {}×{} vs reconstruction {}×{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let values = a
        .data()
        .chunks_exact(CHANNELS)
        .zip(b.data().chunks_exact(CHANNELS))
        .map(|(p, q)| {
            let s: f32 = p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum();
            (s / CHANNELS as f32).min(1.0)
        })
        .collect();
    DifferenceMap::new(a.width(), a.height(), values)
}

/// Strict `value > t` segmentation.
pub fn threshold_map(map: &DifferenceMap, t: f32) -> SegmentationMap {
    SegmentationMap {
        width: map.width,
        height: map.height,
        mask: map.values.iter().map(|&v| v > t).collect(),
        threshold_used: Some(t),
    }
}

/// Box spanning the leftmost, rightmost, topmost and bottommost segmented
/// pixels, or `None` for an empty mask.
pub fn extreme_points(seg: &SegmentationMap) -> Option<BoundingBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..seg.height {
        for x in 0..seg.width {
            if seg.get(x, y) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bounds.map(|(x0, y0, x1, y1)| BoundingBox {
        x_min: x0 as u32,
        y_min: y0 as u32,
        x_max: x1 as u32 + 1,
        y_max: y1 as u32 + 1,
    })
}

/// Empties masks with fewer than `min_pixels` segmented pixels.
pub fn min_area_filter(seg: &SegmentationMap, min_pixels: usize) -> SegmentationMap {
    if seg.count() < min_pixels {
        SegmentationMap::empty(seg.width, seg.height)
    } else {
        seg.clone()
    }
}

pub fn crop(patch: &ImagePatch, b: &BoundingBox) -> Result<CroppedLocalization> {
    if !b.fits_within(patch.width(), patch.height()) {
        return Err(Error::Bounds(format!(
            "box ({},{},{},{}) outside {}×{} patch",
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            patch.width(),
            patch.height()
        )));
    }
    Ok(CroppedLocalization {
        raster: patch
            .raster
            .window(b.x_min as usize, b.y_min as usize, b.width() as usize, b.height() as usize),
        source: *b,
    })
}

/// Writes a crop back at the coordinates it was taken from.
pub fn embed_crop(patch: &mut ImagePatch, c: &CroppedLocalization) -> Result<()> {
    if !c.source.fits_within(patch.width(), patch.height()) {
        return Err(Error::Bounds("crop source box outside patch".into()));
    }
    patch
        .raster
        .paste(&c.raster, c.source.x_min as usize, c.source.y_min as usize);
    Ok(())
}

/// Mosaics per-patch masks into one frame-sized mask.
pub fn stitch_segmentation(
    cells: &[(GridPos, SegmentationMap)],
    rows: usize,
    cols: usize,
    spec: &PatchSpec,
) -> Result<SegmentationMap> {
    let (pw, ph) = (spec.width, spec.height);
    let mut seen = vec![false; rows * cols];
    let mut out = SegmentationMap::empty(cols * pw, rows * ph);
    for (pos, seg) in cells {
        if pos.row >= rows || pos.col >= cols {
            return Err(Error::Completeness(format!(
                "cell ({}, {}) outside {rows}×{cols} grid",
                pos.row, pos.col
            )));
        }
        if seg.width != pw || seg.height != ph {
            return Err(Error::Dimension(format!(
                "cell ({}, {}) is {}×{}, expected {pw}×{ph}",
                pos.row, pos.col, seg.width, seg.height
            )));
        }
        let idx = pos.row * cols + pos.col;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(Error::Completeness(format!("duplicate cell ({}, {})", pos.row, pos.col)));
        }
        for y in 0..ph {
            let dst = (pos.row * ph + y) * out.width + pos.col * pw;
            out.mask[dst..dst + pw].copy_from_slice(&seg.mask[y * pw..(y + 1) * pw]);
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Completeness(format!(
            "missing cell ({}, {})",
            missing / cols,
            missing % cols
        )));
    }
    Ok(out)
}
