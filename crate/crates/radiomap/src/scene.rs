//! Synthetic ground-truth radio maps and on-disk datasets.
//!
//! Ground truth comes from an analytic log-distance model: each transmitter
//! contributes `P - 10 n log10(max(d, d0)/d0)` dB minus a per-wall loss for
//! every building boundary crossed by the transmitter-to-cell segment, plus
//! spatially correlated shadowing. Transmitters combine by summing linear
//! powers. Everything is a deterministic function of the scenario.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{AffineTransform, GridShape, RadioMap};
use crate::seeds::{derive_seed, Stream};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MAPS_FILE: &str = "maps.f32";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A point transmitter at continuous grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    /// Position along columns, in grid units.
    pub x: f64,
    /// Position along rows, in grid units.
    pub y: f64,
    /// Power in dB at the reference distance.
    pub power_db: f64,
    pub pathloss_exponent: f64,
}

impl Transmitter {
    pub fn new(x: f64, y: f64, power_db: f64, pathloss_exponent: f64, shape: GridShape) -> Result<Self> {
        if !(x >= 0.0 && x <= shape.cols as f64 && y >= 0.0 && y <= shape.rows as f64) {
            return Err(Error::InvalidConfig(format!(
                "transmitter at ({x}, {y}) outside {shape} grid"
            )));
        }
        if !(1.5..=4.5).contains(&pathloss_exponent) {
            return Err(Error::InvalidConfig(format!(
                "pathloss exponent {pathloss_exponent} outside [1.5, 4.5]"
            )));
        }
        Ok(Transmitter {
            x,
            y,
            power_db,
            pathloss_exponent,
        })
    }
}

/// Axis-aligned building footprint with a per-wall attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    /// Lower corner along rows (y) and columns (x), in grid units.
    pub y0: f64,
    pub x0: f64,
    pub height: f64,
    pub width: f64,
    pub wall_loss_db: f64,
}

impl Building {
    /// Number of times the open segment a -> b crosses this footprint's
    /// boundary, via parametric slab clipping.
    fn crossings(&self, a: (f64, f64), b: (f64, f64)) -> u32 {
        let (ax, ay) = a;
        let (bx, by) = b;
        let (dx, dy) = (bx - ax, by - ay);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        let mut clip = |origin: f64, dir: f64, lo: f64, hi: f64| -> bool {
            if dir == 0.0 {
                return origin > lo && origin < hi;
            }
            let (mut ta, mut tb) = ((lo - origin) / dir, (hi - origin) / dir);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            t0 <= t1
        };
        if !clip(ax, dx, self.x0, self.x0 + self.width) {
            return 0;
        }
        if !clip(ay, dy, self.y0, self.y0 + self.height) {
            return 0;
        }
        let mut n = 0;
        if t0 > 0.0 && t0 < 1.0 {
            n += 1;
        }
        if t1 > 0.0 && t1 < 1.0 && t1 > t0 {
            n += 1;
        }
        n
    }
}

/// Generator configuration for random scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub tx_count: usize,
    /// Uniform range for transmitter power in dB at the reference distance.
    pub tx_power_db: (f64, f64),
    pub pathloss_exponent: (f64, f64),
    /// Inclusive range for the number of buildings.
    pub building_count: (usize, usize),
    /// Building side lengths as fractions of the shorter grid side.
    pub building_size_frac: (f64, f64),
    pub wall_loss_db: (f64, f64),
    /// Standard deviation of the white shadowing field in dB.
    pub shadowing_sigma: f64,
    /// Box-filter radius used to correlate the shadowing field.
    pub shadowing_radius: usize,
    pub floor_db: f64,
    pub reference_distance: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            tx_count: 7,
            tx_power_db: (-20.0, 0.0),
            pathloss_exponent: (2.0, 3.5),
            building_count: (2, 5),
            building_size_frac: (0.10, 0.30),
            wall_loss_db: (4.0, 12.0),
            shadowing_sigma: 6.0,
            shadowing_radius: 1,
            floor_db: -150.0,
            reference_distance: 1.0,
        }
    }
}

impl ScenarioParams {
    fn validate(&self, shape: GridShape) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if self.tx_count == 0 {
            return Err(Error::InvalidConfig("at least one transmitter required".into()));
        }
        if !ordered(self.tx_power_db) || !ordered(self.pathloss_exponent) || !ordered(self.wall_loss_db) {
            return Err(Error::InvalidConfig("parameter ranges must be ordered".into()));
        }
        if self.pathloss_exponent.0 < 1.5 || self.pathloss_exponent.1 > 4.5 {
            return Err(Error::InvalidConfig(
                "pathloss exponent range must lie in [1.5, 4.5]".into(),
            ));
        }
        if self.building_count.0 > self.building_count.1 {
            return Err(Error::InvalidConfig("building count range must be ordered".into()));
        }
        let side = shape.rows.min(shape.cols) as f64;
        if !(0.0..=1.0).contains(&self.building_size_frac.0)
            || !(0.0..=1.0).contains(&self.building_size_frac.1)
            || self.building_size_frac.0 > self.building_size_frac.1
            || self.building_size_frac.1 * side > side
        {
            return Err(Error::InvalidConfig(
                "building size fractions must satisfy 0 <= lo <= hi <= 1".into(),
            ));
        }
        if self.shadowing_sigma < 0.0 {
            return Err(Error::InvalidConfig("shadowing sigma must be >= 0".into()));
        }
        if !(self.reference_distance > 0.0) {
            return Err(Error::InvalidConfig("reference distance must be positive".into()));
        }
        Ok(())
    }
}

/// A fully specified synthetic scene; rendering is deterministic given this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub shape: GridShape,
    pub transmitters: Vec<Transmitter>,
    pub buildings: Vec<Building>,
    pub shadowing_sigma: f64,
    pub shadowing_radius: usize,
    pub floor_db: f64,
    pub reference_distance: f64,
    pub seed: u64,
}

/// Draws a random scenario as a deterministic function of (shape, params, seed).
pub fn generate_scenario(shape: GridShape, params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    params.validate(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Scenario, 0));
    let (rows, cols) = (shape.rows as f64, shape.cols as f64);

    let margin = 0.1;
    let mut transmitters = Vec::with_capacity(params.tx_count);
    for _ in 0..params.tx_count {
        let x = rng.random_range(margin..cols - margin);
        let y = rng.random_range(margin..rows - margin);
        let power = rng.random_range(params.tx_power_db.0..=params.tx_power_db.1);
        let exponent = rng.random_range(params.pathloss_exponent.0..=params.pathloss_exponent.1);
        transmitters.push(Transmitter::new(x, y, power, exponent, shape)?);
    }

    let count = rng.random_range(params.building_count.0..=params.building_count.1);
    let side = rows.min(cols);
    let mut buildings = Vec::with_capacity(count);
    for _ in 0..count {
        let w = rng.random_range(params.building_size_frac.0 * side..=params.building_size_frac.1 * side);
        let h = rng.random_range(params.building_size_frac.0 * side..=params.building_size_frac.1 * side);
        let x0 = rng.random_range(0.0..(cols - w).max(f64::MIN_POSITIVE));
        let y0 = rng.random_range(0.0..(rows - h).max(f64::MIN_POSITIVE));
        let loss = rng.random_range(params.wall_loss_db.0..=params.wall_loss_db.1);
        buildings.push(Building {
            y0,
            x0,
            height: h,
            width: w,
            wall_loss_db: loss,
        });
    }

    Ok(Scenario {
        shape,
        transmitters,
        buildings,
        shadowing_sigma: params.shadowing_sigma,
        shadowing_radius: params.shadowing_radius,
        floor_db: params.floor_db,
        reference_distance: params.reference_distance,
        seed,
    })
}

/// Correlated shadowing field: white Gaussian noise in dB smoothed by a
/// separable box filter.
fn shadowing_field(scenario: &Scenario) -> Vec<f64> {
    let shape = scenario.shape;
    let n = shape.cell_count();
    if scenario.shadowing_sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, Stream::Scenario, 1));
    let normal = Normal::new(0.0, scenario.shadowing_sigma).expect("sigma validated");
    let mut field: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();

    let r = scenario.shadowing_radius as isize;
    if r == 0 {
        return field;
    }
    let (rows, cols) = (shape.rows as isize, shape.cols as isize);
    // horizontal pass
    let mut tmp = vec![0.0; n];
    for i in 0..rows {
        for j in 0..cols {
            let lo = (j - r).max(0);
            let hi = (j + r).min(cols - 1);
            let mut acc = 0.0;
            for jj in lo..=hi {
                acc += field[(i * cols + jj) as usize];
            }
            tmp[(i * cols + j) as usize] = acc / (hi - lo + 1) as f64;
        }
    }
    // vertical pass
    for j in 0..cols {
        for i in 0..rows {
            let lo = (i - r).max(0);
            let hi = (i + r).min(rows - 1);
            let mut acc = 0.0;
            for ii in lo..=hi {
                acc += tmp[(ii * cols + j) as usize];
            }
            field[(i * cols + j) as usize] = acc / (hi - lo + 1) as f64;
        }
    }
    field
}

/// Renders the dense ground-truth map for a scenario.
pub fn render_map(scenario: &Scenario) -> RadioMap {
    let shape = scenario.shape;
    let shadow = shadowing_field(scenario);
    let d0 = scenario.reference_distance;
    let p_max = scenario
        .transmitters
        .iter()
        .map(|t| t.power_db)
        .fold(f64::NEG_INFINITY, f64::max);
    let ceiling = p_max + 3.0 * scenario.transmitters.len() as f64;

    let mut values = vec![0.0; shape.cell_count()];
    for (idx, v) in values.iter_mut().enumerate() {
        let cell = shape.cell_at(idx);
        let (cx, cy) = cell.center();
        let mut linear = 0.0;
        for tx in &scenario.transmitters {
            let d = ((cx - tx.x).powi(2) + (cy - tx.y).powi(2)).sqrt();
            let pathloss = 10.0 * tx.pathloss_exponent * (d.max(d0) / d0).log10();
            let mut wall_loss = 0.0;
            for b in &scenario.buildings {
                wall_loss += f64::from(b.crossings((tx.x, tx.y), (cx, cy))) * b.wall_loss_db;
            }
            let db = tx.power_db - pathloss - wall_loss;
            linear += 10f64.powf(db / 10.0);
        }
        let db = if linear > 0.0 {
            10.0 * linear.log10() + shadow[idx]
        } else {
            scenario.floor_db
        };
        *v = db.clamp(scenario.floor_db, ceiling);
    }
    RadioMap::from_values(shape, values).expect("rendered values are finite")
}

/// Train/test split of a dataset; each split draws scenario seeds from its
/// own stream so the two never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn stream(self) -> Stream {
        match self {
            Split::Train => Stream::DatasetTrain,
            Split::Test => Stream::DatasetTest,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Metadata stored next to the packed maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub count: usize,
    pub shape: GridShape,
    pub params: ScenarioParams,
    pub seed: u64,
    pub db_min: f64,
    pub db_max: f64,
}

impl DatasetManifest {
    /// Affine transform mapping the dataset's dB range onto [-1, 1].
    pub fn model_transform(&self) -> Result<AffineTransform> {
        AffineTransform::to_unit_range(self.db_min, self.db_max)
    }
}

/// The scenario seed used for map `index` of a split.
pub fn scenario_seed(global_seed: u64, split: Split, index: u64) -> u64 {
    derive_seed(global_seed, split.stream(), index)
}

/// Renders `count` scenarios and writes `manifest.json` plus `maps.f32`
/// (row-major 32-bit little-endian, maps concatenated) under `out_dir`.
pub fn build_dataset(
    count: usize,
    shape: GridShape,
    params: &ScenarioParams,
    seed: u64,
    split: Split,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidConfig("dataset count must be >= 1".into()));
    }
    params.validate(shape)?;

    let maps: Vec<RadioMap> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let scenario = generate_scenario(shape, params, scenario_seed(seed, split, idx as u64))?;
            Ok(render_map(&scenario))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut buf = Vec::with_capacity(count * shape.cell_count() * 4);
    let mut db_min = f32::INFINITY;
    let mut db_max = f32::NEG_INFINITY;
    for map in &maps {
        for &v in map.values() {
            let v32 = v as f32;
            db_min = db_min.min(v32);
            db_max = db_max.max(v32);
            buf.extend_from_slice(&v32.to_le_bytes());
        }
    }

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        split,
        count,
        shape,
        params: params.clone(),
        seed,
        db_min: f64::from(db_min),
        db_max: f64::from(db_max),
    };

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let maps_path = out_dir.join(MAPS_FILE);
    fs::File::create(&maps_path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(&maps_path, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::json("serializing dataset manifest", e))?;
    fs::File::create(&manifest_path)
        .and_then(|mut f| f.write_all(&json))
        .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// A dataset loaded back into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub maps: Vec<RadioMap>,
}

impl Dataset {
    pub fn model_transform(&self) -> Result<AffineTransform> {
        self.manifest.model_transform()
    }
}

/// Reads a dataset directory written by [`build_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::json(format!("parsing {}", manifest_path.display()), e))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }

    let maps_path = dir.join(MAPS_FILE);
    let mut bytes = Vec::new();
    fs::File::open(&maps_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&maps_path, e))?;
    let cells = manifest.shape.cell_count();
    let expected = manifest.count * cells * 4;
    if bytes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "{}: expected {} bytes for {} maps, found {}",
            maps_path.display(),
            expected,
            manifest.count,
            bytes.len()
        )));
    }

    let mut maps = Vec::with_capacity(manifest.count);
    for m in 0..manifest.count {
        let mut values = Vec::with_capacity(cells);
        for k in 0..cells {
            let off = (m * cells + k) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            values.push(f64::from(v));
        }
        maps.push(RadioMap::from_values(manifest.shape, values)?);
    }
    Ok(Dataset { manifest, maps })
}
