use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PatchSpec;
use crate::error::{Error, Result};
use crate::imaging::BoundingBox;

pub const ANNOTATION_HEADER: [&str; 6] = ["patch_id", "x_min", "y_min", "x_max", "y_max", "label"];

/// One annotated object box inside a patch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patch_id: String,
    pub bbox: BoundingBox,
    pub label: String,
}

/// Loads an annotation CSV, validating every box against `patch`.
pub fn load_annotations(path: &Path, patch: &PatchSpec) -> Result<Vec<GroundTruth>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(file, patch)
}

pub fn read_annotations<R: Read>(reader: R, patch: &PatchSpec) -> Result<Vec<GroundTruth>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(ANNOTATION_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", ANNOTATION_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 6 {
            return Err(Error::Parse {
                line,
                message: format!("expected 6 fields, found {}", rec.len()),
            });
        }
        let coord = |i: usize| -> Result<u32> {
            rec[i].trim().parse::<u32>().map_err(|e| Error::Parse {
                line,
                message: format!("{}: `{}`: {e}", ANNOTATION_HEADER[i], &rec[i]),
            })
        };
        let (x0, y0, x1, y1) = (coord(1)?, coord(2)?, coord(3)?, coord(4)?);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Validation {
                line,
                message: format!("empty or inverted box ({x0},{y0},{x1},{y1})"),
            });
        }
        let bbox = BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        };
        if !bbox.fits_within(patch.width, patch.height) {
            return Err(Error::Validation {
                line,
                message: format!(
                    "box ({x0},{y0},{x1},{y1}) exceeds {}×{} patch",
                    patch.width, patch.height
                ),
            });
        }
        out.push(GroundTruth {
            patch_id: rec[0].trim().to_string(),
            bbox,
            label: rec[5].trim().to_string(),
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(writer: W, rows: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Format(format!("annotation CSV: {e}"));
    w.write_record(ANNOTATION_HEADER).map_err(to_err)?;
    for g in rows {
        w.write_record([
            g.patch_id.clone(),
            g.bbox.x_min.to_string(),
            g.bbox.y_min.to_string(),
            g.bbox.x_max.to_string(),
            g.bbox.y_max.to_string(),
            g.label.clone(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<annotations>", e))
}
