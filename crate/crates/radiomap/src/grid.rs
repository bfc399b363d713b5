//! Grid geometry and the dense/sparse map types shared by the whole crate.
//!
//! A radio map is a dense row-major `rows x cols` grid of received signal
//! strength values in dB. Measurements are a sparse set of (cell, value)
//! entries in chronological order with a boolean mask, and the degradation
//! operator extracts map entries at the measured cells in that order.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dimensions of the planar grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        Ok(GridShape { rows, cols })
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.i < self.rows && cell.j < self.cols
    }

    pub fn index(&self, cell: Cell) -> usize {
        debug_assert!(self.contains(cell));
        cell.i * self.cols + cell.j
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        debug_assert!(index < self.cell_count());
        Cell::new(index / self.cols, index % self.cols)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let cols = self.cols;
        (0..self.cell_count()).map(move |k| Cell::new(k / cols, k % cols))
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// One grid coordinate (row, column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub fn new(i: usize, j: usize) -> Self {
        Cell { i, j }
    }

    /// Center of the cell in continuous grid units (x along columns, y along rows).
    pub fn center(&self) -> (f64, f64) {
        (self.j as f64 + 0.5, self.i as f64 + 0.5)
    }

    /// The 4-connected neighbors inside `shape`.
    pub fn neighbors4(&self, shape: GridShape) -> impl Iterator<Item = Cell> {
        let (i, j) = (self.i as isize, self.j as isize);
        let (rows, cols) = (shape.rows as isize, shape.cols as isize);
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            .into_iter()
            .filter(move |&(r, c)| r >= 0 && r < rows && c >= 0 && c < cols)
            .map(|(r, c)| Cell::new(r as usize, c as usize))
    }
}

/// Manhattan distance between two cells.
pub fn manhattan(a: Cell, b: Cell) -> usize {
    a.i.abs_diff(b.i) + a.j.abs_diff(b.j)
}

/// Dense row-major grid of RSS values in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl RadioMap {
    /// Builds a map from row-major values; every value must be finite.
    pub fn from_values(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.cell_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {} grid, got {}",
                shape.cell_count(),
                shape,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "radio map values".into(),
            });
        }
        Ok(RadioMap { shape, values })
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        RadioMap {
            shape,
            values: vec![value; shape.cell_count()],
        }
    }

    /// Internal constructor for hot paths whose values may be transiently
    /// non-finite; callers are responsible for finiteness checks.
    pub(crate) fn from_raw(shape: GridShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.cell_count());
        RadioMap { shape, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[self.shape.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, value: f64) {
        let idx = self.shape.index(cell);
        self.values[idx] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise combination of two same-shape maps.
    pub fn zip_with(&self, other: &RadioMap, f: impl Fn(f64, f64) -> f64) -> Result<RadioMap> {
        check_same_shape(self.shape, other.shape)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(RadioMap {
            shape: self.shape,
            values,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RadioMap {
        RadioMap {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in &self.values {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }
}

pub(crate) fn check_same_shape(left: GridShape, right: GridShape) -> Result<()> {
    if left != right {
        return Err(Error::ShapeMismatch {
            left: left.to_string(),
            right: right.to_string(),
        });
    }
    Ok(())
}

/// Sparse set of (cell, dB value) measurements in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    shape: GridShape,
    entries: Vec<(Cell, f64)>,
    mask: Vec<bool>,
}

impl ObservationSet {
    pub fn new(shape: GridShape) -> Self {
        ObservationSet {
            shape,
            entries: Vec::new(),
            mask: vec![false; shape.cell_count()],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Cell, f64)] {
        &self.entries
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.mask[self.shape.index(cell)]
    }

    /// Appends a measurement; duplicate cells are rejected.
    pub fn insert(&mut self, cell: Cell, value: f64) -> Result<()> {
        if !self.shape.contains(cell) {
            return Err(Error::InvalidInput(format!(
                "cell ({}, {}) outside {} grid",
                cell.i, cell.j, self.shape
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("observation at ({}, {})", cell.i, cell.j),
            });
        }
        let idx = self.shape.index(cell);
        if self.mask[idx] {
            return Err(Error::InvalidInput(format!(
                "duplicate observation at ({}, {})",
                cell.i, cell.j
            )));
        }
        self.mask[idx] = true;
        self.entries.push((cell, value));
        Ok(())
    }

    /// Cells currently without an observation, in row-major order.
    pub fn unsampled_cells(&self) -> Vec<Cell> {
        self.shape
            .cells()
            .filter(|&c| !self.mask[self.shape.index(c)])
            .collect()
    }

    /// Order-sensitive fingerprint of the entries (FNV-1a over cells and value bits).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x100000001b3);
        };
        mix(self.shape.rows as u64);
        mix(self.shape.cols as u64);
        for &(cell, value) in &self.entries {
            mix(cell.i as u64);
            mix(cell.j as u64);
            mix(value.to_bits());
        }
        h
    }
}

/// Extracts the map entries at the observed cells, in entry order.
///
/// This is the degradation operator mapping a dense map to the measurement
/// vector `y`.
pub fn apply_degradation(map: &RadioMap, obs: &ObservationSet) -> Result<Vec<f64>> {
    check_same_shape(map.shape(), obs.shape())?;
    Ok(obs.entries().iter().map(|&(cell, _)| map.get(cell)).collect())
}

/// Invertible element-wise affine map between dB space and model space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    scale: f64,
    offset: f64,
}

impl AffineTransform {
    pub fn new(scale: f64, offset: f64) -> Result<Self> {
        if scale == 0.0 || !scale.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "affine transform needs finite nonzero scale, got scale={scale}, offset={offset}"
            )));
        }
        Ok(AffineTransform { scale, offset })
    }

    pub fn identity() -> Self {
        AffineTransform {
            scale: 1.0,
            offset: 0.0,
        }
    }

    /// Transform mapping `[lo, hi]` onto `[-1, 1]`.
    pub fn to_unit_range(lo: f64, hi: f64) -> Result<Self> {
        if !(hi - lo).is_finite() || hi <= lo {
            return Err(Error::InvalidConfig(format!(
                "cannot normalize degenerate range [{lo}, {hi}]"
            )));
        }
        let scale = 2.0 / (hi - lo);
        let offset = -(hi + lo) / (hi - lo);
        AffineTransform::new(scale, offset)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn invert_value(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// Element-wise `scale * x + offset` over a map.
pub fn normalize(map: &RadioMap, t: AffineTransform) -> RadioMap {
    map.map(|v| t.apply(v))
}

/// Exact inverse of [`normalize`].
pub fn denormalize(map: &RadioMap, t: AffineTransform) -> RadioMap {
    map.map(|v| t.invert_value(v))
}
