//! Generative ensembles and the per-cell variance uncertainty map.
//!
//! An ensemble is built by running the reconstruction `M` times from
//! different initial noise; where measurements pin the members together the
//! variance collapses, and it stays large where the prior fills in.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::VelocityModel;
use crate::grid::{check_same_shape, AffineTransform, GridShape, ObservationSet, RadioMap};
use crate::pnp::{reconstruct, PnPConfig};
use crate::{Error, Result};

/// M independent reconstructions of the same observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<RadioMap>,
    seeds: Vec<u64>,
    obs_fingerprint: u64,
}

impl Ensemble {
    /// Assembles an ensemble from precomputed members.
    pub fn from_members(members: Vec<RadioMap>, seeds: Vec<u64>, obs_fingerprint: u64) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidConfig("an ensemble needs at least two members".into()));
        }
        if members.len() != seeds.len() {
            return Err(Error::InvalidConfig("one seed per ensemble member required".into()));
        }
        let shape = members[0].shape();
        for m in &members[1..] {
            check_same_shape(shape, m.shape())?;
        }
        Ok(Ensemble {
            members,
            seeds,
            obs_fingerprint,
        })
    }

    pub fn members(&self) -> &[RadioMap] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn obs_fingerprint(&self) -> u64 {
        self.obs_fingerprint
    }

    pub fn shape(&self) -> GridShape {
        self.members[0].shape()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Per-cell mean of the dB values across the members.
    pub fn mean_map(&self) -> RadioMap {
        let shape = self.shape();
        let inv = 1.0 / self.members.len() as f64;
        let mut values = vec![0.0; shape.cell_count()];
        for member in &self.members {
            for (acc, v) in values.iter_mut().zip(member.values()) {
                *acc += v;
            }
        }
        for v in &mut values {
            *v *= inv;
        }
        RadioMap::from_raw(shape, values)
    }

    /// Per-cell mean taken in the linear power domain, returned in dB.
    ///
    /// This is the minimum-MSE summary under the linear-domain error
    /// metric.
    pub fn linear_mean_map(&self) -> RadioMap {
        let shape = self.shape();
        let inv = 1.0 / self.members.len() as f64;
        let mut values = vec![0.0; shape.cell_count()];
        for member in &self.members {
            for (acc, v) in values.iter_mut().zip(member.values()) {
                *acc += 10f64.powf(v / 10.0);
            }
        }
        for v in &mut values {
            *v = 10.0 * (*v * inv).log10();
        }
        RadioMap::from_raw(shape, values)
    }
}

/// Per-cell variance across an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn from_values(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.cell_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} variance values, got {}",
                shape.cell_count(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidInput(
                "variance values must be finite and nonnegative".into(),
            ));
        }
        Ok(UncertaintyMap { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cell: crate::grid::Cell) -> f64 {
        self.values[self.shape.index(cell)]
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

/// Runs the reconstruction `m` times with seeds `base_seed + 0 .. base_seed + m - 1`.
///
/// Members are computed in parallel and collected in seed order, so the
/// result is deterministic given the inputs.
pub fn generate_ensemble<V: VelocityModel>(
    field: &V,
    transform: AffineTransform,
    obs: &ObservationSet,
    config: &PnPConfig,
    m: usize,
    base_seed: u64,
) -> Result<Ensemble> {
    if m < 2 {
        return Err(Error::InvalidConfig("ensemble size must be >= 2".into()));
    }
    let seeds: Vec<u64> = (0..m as u64).map(|k| base_seed.wrapping_add(k)).collect();
    let members: Vec<RadioMap> = seeds
        .par_iter()
        .map(|&seed| {
            reconstruct(field, transform, obs, config, seed).map_err(|e| match e {
                Error::Divergence { step, context } => Error::Divergence {
                    step,
                    context: format!("ensemble member with seed {seed}: {context}"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::from_members(members, seeds, obs.fingerprint())
}

/// Location-wise population variance across the ensemble (divisor `M`).
pub fn variance_map(ensemble: &Ensemble) -> Result<UncertaintyMap> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidConfig("variance needs at least two members".into()));
    }
    let shape = ensemble.shape();
    let n = shape.cell_count();

    // Welford's recurrence per cell; numerically stable for tight ensembles.
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (idx, member) in ensemble.members().iter().enumerate() {
        let count = (idx + 1) as f64;
        for ((mu, acc), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(member.values()) {
            let delta = x - *mu;
            *mu += delta / count;
            *acc += delta * (x - *mu);
        }
    }
    let inv = 1.0 / ensemble.len() as f64;
    let values: Vec<f64> = m2.iter().map(|v| (v * inv).max(0.0)).collect();
    UncertaintyMap::from_values(shape, values)
}
