//! Model file format: one JSON header line followed by the parameter blob
//! as 32-bit IEEE-754 little-endian values in declared segment order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{AffineTransform, GridShape};
use crate::{Error, Result};

use super::{Arch, Segment, VelocityField};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    arch: Arch,
    shape: GridShape,
    transform: AffineTransform,
    train_seed: u64,
    segments: Vec<Segment>,
    loss_history: Vec<f64>,
}

/// Writes a velocity field to `path`; parameters are stored in f32.
pub fn save_model(field: &VelocityField, path: &Path) -> Result<()> {
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        arch: field.arch().clone(),
        shape: field.shape(),
        transform: field.transform(),
        train_seed: field.train_seed(),
        segments: field.arch().segments(),
        loss_history: field.loss_history().to_vec(),
    };
    let mut bytes =
        serde_json::to_vec(&header).map_err(|e| Error::json("serializing model header", e))?;
    bytes.push(b'\n');
    for &p in field.params() {
        bytes.extend_from_slice(&(p as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

/// Reads a velocity field saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<VelocityField> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader
        .read_line(&mut header_line)
        .map_err(|e| Error::io(path, e))?;
    let header: ModelHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::json(format!("parsing model header of {}", path.display()), e))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported model format version {}",
            header.format_version
        )));
    }
    if header.segments != header.arch.segments() {
        return Err(Error::InvalidConfig(
            "model segment table does not match the architecture".into(),
        ));
    }

    let mut blob = Vec::new();
    reader.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    let expected = header.arch.param_count() * 4;
    if blob.len() != expected {
        return Err(Error::InvalidInput(format!(
            "{}: expected {} parameter bytes, found {}",
            path.display(),
            expected,
            blob.len()
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();

    let mut field = VelocityField::with_params(
        header.arch,
        header.shape,
        header.transform,
        header.train_seed,
        params,
    )?;
    field.set_history(header.loss_history);
    Ok(field)
}
