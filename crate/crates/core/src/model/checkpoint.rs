//! Self-describing checkpoint container.
//!
//! ```text
//! b"FODCKPT\0" | u32 LE format version | u64 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The JSON header records the model kind, its full spec, and the name and
//! shape of every tensor in storage order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autoencoder::{Autoencoder, AutoencoderSpec};
use super::classifier::{Classifier, ClassifierSpec};
use super::layers::Parameters;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FODCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "lowercase")]
pub enum ModelSpec {
    Autoencoder(AutoencoderSpec),
    Classifier(ClassifierSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    tensors: Vec<TensorEntry>,
}

fn write_checkpoint<M: Parameters<f32>>(model: &M, spec: ModelSpec, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    model.visit("", &mut |name, p| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.shape.clone(),
        });
        for v in &p.value {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&Header { model: spec, tensors })
        .map_err(|e| Error::Checkpoint(format!("header encoding: {e}")))?;
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    f.write_all(MAGIC).map_err(io)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    f.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    f.write_all(&header).map_err(io)?;
    f.write_all(&data).map_err(io)?;
    f.flush().map_err(io)
}

fn read_checkpoint(path: &Path) -> Result<(Header, Vec<f32>)> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header decoding: {e}")))?;
    let raw = &bytes[20 + hlen..];
    if raw.len() % 4 != 0 {
        return Err(Error::Checkpoint("tensor data is not a whole number of f32 values".into()));
    }
    let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

fn fill<M: Parameters<f32>>(model: &mut M, header: &Header, values: &[f32]) -> Result<()> {
    let mut expected = Vec::new();
    model.visit("", &mut |name, p| expected.push((name.to_string(), p.shape.clone())));
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), t) in expected.iter().zip(&header.tensors) {
        if *name != t.name || *shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match model tensor `{name}` {shape:?}",
                t.name, t.shape
            )));
        }
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} values, model needs {total}",
            values.len()
        )));
    }
    let mut offset = 0;
    model.visit_mut("", &mut |_, p| {
        let n = p.value.len();
        p.value.copy_from_slice(&values[offset..offset + n]);
        p.zero_grad();
        offset += n;
    });
    Ok(())
}

pub fn save_autoencoder(model: &Autoencoder<f32>, path: &Path) -> Result<()> {
    write_checkpoint(model, ModelSpec::Autoencoder(model.spec), path)
}

/// Rebuilds the autoencoder from the spec recorded in the checkpoint.
pub fn load_autoencoder(path: &Path) -> Result<Autoencoder<f32>> {
    let (header, values) = read_checkpoint(path)?;
    let spec = match &header.model {
        ModelSpec::Autoencoder(s) => *s,
        ModelSpec::Classifier(_) => {
            return Err(Error::Checkpoint(format!("{}: holds a classifier", path.display())))
        }
    };
    let mut model = Autoencoder::new(&spec, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fill(&mut model, &header, &values)?;
    Ok(model)
}

/// Like [`load_autoencoder`], but fails unless the stored spec equals `expected`.
pub fn load_autoencoder_expecting(path: &Path, expected: &AutoencoderSpec) -> Result<Autoencoder<f32>> {
    let model = load_autoencoder(path)?;
    if model.spec != *expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint spec {} does not match requested {}",
            model.spec.name(),
            expected.name()
        )));
    }
    Ok(model)
}

pub fn save_classifier(model: &Classifier<f32>, path: &Path) -> Result<()> {
    write_checkpoint(model, ModelSpec::Classifier(model.spec.clone()), path)
}

pub fn load_classifier(path: &Path) -> Result<Classifier<f32>> {
    let (header, values) = read_checkpoint(path)?;
    let spec = match &header.model {
        ModelSpec::Classifier(s) => s.clone(),
        ModelSpec::Autoencoder(_) => {
            return Err(Error::Checkpoint(format!("{}: holds an autoencoder", path.display())))
        }
    };
    let mut model = Classifier::new(&spec, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fill(&mut model, &header, &values)?;
    Ok(model)
}

/// Reads only the recorded model spec.
pub fn read_spec(path: &Path) -> Result<ModelSpec> {
    Ok(read_checkpoint(path)?.0.model)
}
