//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.csv      path,split,width,height   (one row per patch)
//! <root>/annotations.csv   patch_id,x_min,y_min,x_max,y_max,label
//! <root>/train/train_00000.png ...
//! <root>/test/test_00000.png ...
//! ```
//!
//! Paths in the manifest are relative to the root; a patch id is the file
//! stem of its image.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{generate_scenes, write_annotations, GroundTruth, PatchSpec, SyntheticSceneConfig};
use crate::error::{Error, Result};
use crate::imaging::ImagePatch;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown split `{other}`"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
    pub width: usize,
    pub height: usize,
}

impl ManifestEntry {
    pub fn patch_id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for rec in rdr.deserialize::<ManifestEntry>() {
            entries.push(rec.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?);
        }
        Ok(DatasetManifest { root, entries })
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Loads every patch of a split, paired with its id.
    pub fn load_patches(&self, split: Split) -> Result<Vec<(String, ImagePatch)>> {
        self.split(split)
            .map(|e| {
                let patch = ImagePatch::load_png(&self.root.join(&e.path))?;
                if patch.width() != e.width || patch.height() != e.height {
                    return Err(Error::Dimension(format!(
                        "{}: manifest says {}×{}, file is {}×{}",
                        e.path,
                        e.width,
                        e.height,
                        patch.width(),
                        patch.height()
                    )));
                }
                Ok((e.patch_id(), patch))
            })
            .collect()
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join(ANNOTATIONS_FILE)
    }
}

/// Seed of scene `index` in `stream` (splitmix64 finalizer).
pub fn scene_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes `n_train_clean` debris-free training patches and `n_test` test
/// patches (debris frequency per `config.fraction_clean`) with their
/// annotation CSV and manifest.
pub fn build_dataset(
    config: &SyntheticSceneConfig,
    n_train_clean: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    for sub in ["train", "test"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let PatchSpec { width, height } = config.patch;
    let mut entries = Vec::with_capacity(n_train_clean + n_test);

    let clean = config.clean();
    for (i, scene) in generate_scenes(&clean, TRAIN_STREAM, n_train_clean).into_iter().enumerate() {
        let rel = format!("train/train_{i:05}.png");
        scene.patch.raster.save_png(&out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            split: Split::Train,
            width,
            height,
        });
    }

    let mut annotations: Vec<GroundTruth> = Vec::new();
    for (i, scene) in generate_scenes(config, TEST_STREAM, n_test).into_iter().enumerate() {
        let id = format!("test_{i:05}");
        let rel = format!("test/{id}.png");
        scene.patch.raster.save_png(&out_dir.join(&rel))?;
        annotations.extend(scene.ground_truth.into_iter().map(|g| GroundTruth {
            patch_id: id.clone(),
            ..g
        }));
        entries.push(ManifestEntry {
            path: rel,
            split: Split::Test,
            width,
            height,
        });
    }

    let ann_path = out_dir.join(ANNOTATIONS_FILE);
    let file = std::fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    write_annotations(file, &annotations)?;

    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Stream ids used by [`build_dataset`], for callers that regenerate the
/// same scenes in memory.
pub mod streams {
    pub const TRAIN: u64 = super::TRAIN_STREAM;
    pub const TEST: u64 = super::TEST_STREAM;
}
