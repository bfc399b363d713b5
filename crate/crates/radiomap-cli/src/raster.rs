//! 8-bit grayscale PNG snapshots with min/max sidecar files.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use radiomap::grid::{Cell, GridShape};
use radiomap::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
struct Sidecar {
    min: f64,
    max: f64,
}

/// Writes `values` as a grayscale PNG scaled per-image to [0, 255] and a
/// `<path>.json` sidecar recording the scaling range.
pub fn write_gray_png(path: &Path, shape: GridShape, values: &[f64]) -> Result<()> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = max - min;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    write_pixels(path, shape, &pixels)?;

    let sidecar_path = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&Sidecar { min, max })
        .map_err(|e| Error::json("serializing png sidecar", e))?;
    fs::write(&sidecar_path, json).map_err(|e| Error::Io {
        path: sidecar_path,
        source: e,
    })
}

/// Uncertainty base layer with the planned trajectory burned in at full
/// white and candidate cells just below it.
pub fn write_trajectory_png(
    path: &Path,
    shape: GridShape,
    base: &[f64],
    trajectory: &[Cell],
    candidates: &[Cell],
) -> Result<()> {
    let (min, max) = base
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = max - min;
    let mut pixels: Vec<u8> = base
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 180.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    for cell in candidates {
        pixels[shape.index(*cell)] = 220;
    }
    for cell in trajectory {
        pixels[shape.index(*cell)] = 255;
    }
    write_pixels(path, shape, &pixels)
}

fn write_pixels(path: &Path, shape: GridShape, pixels: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        shape.cols as u32,
        shape.rows as u32,
    );
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let io_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::Io {
            path: path.to_path_buf(),
            source: io,
        },
        other => Error::InvalidInput(format!("png encoding failed: {other}")),
    };
    let mut writer = encoder.write_header().map_err(io_err)?;
    writer.write_image_data(pixels).map_err(io_err)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}
