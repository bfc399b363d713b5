//! Plug-and-play reconstruction from sparse observations.
//!
//! One run carries an initial noise map through `K` outer steps at times
//! `t_k = k/K`. Each outer step applies an inner refinement loop of
//! `U_k` iterations: a data-consistency gradient step on the observed
//! cells, a path projection back toward the run's initial noise, and the
//! one-step flow denoiser. Early outer steps use a single refinement to
//! lay down coarse structure; late steps use more to recover detail.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{denoise, FlowSource, VelocityModel};
use crate::grid::{check_same_shape, denormalize, AffineTransform, ObservationSet, RadioMap};
use crate::{Error, Result};

/// Gradient convention for the data-fidelity term.
///
/// Under `HalfSquared` (`F = 1/2 ||H(Z) - y||^2`) the gradient at an
/// observed cell is the raw residual `Z_c - y_c`; under `Squared`
/// (`F = ||H(Z) - y||^2`) it is twice that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityConvention {
    HalfSquared,
    Squared,
}

impl FidelityConvention {
    fn gradient_factor(self) -> f64 {
        match self {
            FidelityConvention::HalfSquared => 1.0,
            FidelityConvention::Squared => 2.0,
        }
    }

    fn fidelity_factor(self) -> f64 {
        match self {
            FidelityConvention::HalfSquared => 0.5,
            FidelityConvention::Squared => 1.0,
        }
    }
}

/// Two-level inner refinement schedule: `low` iterations before the
/// threshold outer step, `high` from it onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementSchedule {
    pub threshold: usize,
    pub low: usize,
    pub high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPConfig {
    /// Number of outer steps `K`.
    pub outer_steps: usize,
    /// Data-consistency step size.
    pub step_size: f64,
    pub schedule: RefinementSchedule,
    pub fidelity: FidelityConvention,
}

impl Default for PnPConfig {
    fn default() -> Self {
        PnPConfig {
            outer_steps: 50,
            step_size: 2.0,
            schedule: RefinementSchedule {
                threshold: 46,
                low: 1,
                high: 10,
            },
            fidelity: FidelityConvention::HalfSquared,
        }
    }
}

impl PnPConfig {
    /// Default schedule scaled to `outer_steps`: the last four outer steps
    /// get the high refinement count, mirroring the 46-of-50 default.
    pub fn with_outer_steps(outer_steps: usize) -> Self {
        let defaults = PnPConfig::default();
        PnPConfig {
            outer_steps,
            schedule: RefinementSchedule {
                threshold: outer_steps.saturating_sub(4).max(1),
                ..defaults.schedule
            },
            ..defaults
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_steps == 0 {
            return Err(Error::InvalidConfig("outer step count must be >= 1".into()));
        }
        if !(self.step_size >= 0.0) {
            return Err(Error::InvalidConfig("step size must be >= 0".into()));
        }
        if self.schedule.low == 0 || self.schedule.high == 0 {
            return Err(Error::InvalidConfig("refinement counts must be >= 1".into()));
        }
        if self.schedule.threshold == 0 || self.schedule.threshold > self.outer_steps {
            return Err(Error::InvalidConfig(format!(
                "refinement threshold {} outside 1..={}",
                self.schedule.threshold, self.outer_steps
            )));
        }
        Ok(())
    }
}

/// Number of inner refinements at outer step `k` (1-based).
pub fn refinement_schedule(k: usize, config: &PnPConfig) -> usize {
    debug_assert!(k >= 1 && k <= config.outer_steps);
    if k < config.schedule.threshold {
        config.schedule.low
    } else {
        config.schedule.high
    }
}

/// Gradient step on the data-fidelity term: observed cells move toward
/// their measurements, unobserved cells are untouched. `obs` must already
/// live in the same space as `z`.
pub fn data_consistency_step(
    z: &RadioMap,
    obs: &ObservationSet,
    step_size: f64,
    convention: FidelityConvention,
) -> Result<RadioMap> {
    check_same_shape(z.shape(), obs.shape())?;
    let factor = step_size * convention.gradient_factor();
    let mut out = z.clone();
    for &(cell, y) in obs.entries() {
        let current = out.get(cell);
        out.set(cell, current - factor * (current - y));
    }
    Ok(out)
}

/// Data-fidelity value `F(Z; y)` under the given convention.
pub fn data_fidelity(z: &RadioMap, obs: &ObservationSet, convention: FidelityConvention) -> Result<f64> {
    check_same_shape(z.shape(), obs.shape())?;
    let mut acc = 0.0;
    for &(cell, y) in obs.entries() {
        let r = z.get(cell) - y;
        acc += r * r;
    }
    Ok(convention.fidelity_factor() * acc)
}

/// Re-anchors an estimate onto the generative path: `t Z + (1 - t) Z0`.
pub fn path_projection(z_hat: &RadioMap, z0: &RadioMap, t: f64) -> Result<RadioMap> {
    check_same_shape(z_hat.shape(), z0.shape())?;
    z_hat.zip_with(z0, |a, b| t * a + (1.0 - t) * b)
}

/// Per-outer-step diagnostics of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStepDiag {
    pub k: usize,
    pub t: f64,
    /// Data-fidelity value after the step's inner loop.
    pub fidelity: f64,
    /// Norm of the change over the outer step.
    pub change_norm: f64,
}

/// Record of one reconstruction run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRun {
    pub seed: u64,
    /// The initial noise map, fixed for every path projection in the run.
    pub initial_noise: RadioMap,
    pub steps: Vec<OuterStepDiag>,
}

/// Runs the full reconstruction and returns the map in dB space.
pub fn reconstruct<V: VelocityModel>(
    field: &V,
    transform: AffineTransform,
    obs: &ObservationSet,
    config: &PnPConfig,
    seed: u64,
) -> Result<RadioMap> {
    reconstruct_with_run(field, transform, obs, config, seed).map(|(map, _)| map)
}

/// As [`reconstruct`], also returning per-step diagnostics.
pub fn reconstruct_with_run<V: VelocityModel>(
    field: &V,
    transform: AffineTransform,
    obs: &ObservationSet,
    config: &PnPConfig,
    seed: u64,
) -> Result<(RadioMap, ReconstructionRun)> {
    config.validate()?;
    let shape = obs.shape();

    // observations enter model space once per run
    let mut obs_model = ObservationSet::new(shape);
    for &(cell, y) in obs.entries() {
        obs_model.insert(cell, transform.apply(y))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = FlowSource.sample(shape, &mut rng);
    let mut z = z0.clone();
    let k_total = config.outer_steps;
    let mut steps = Vec::with_capacity(k_total);

    for k in 1..=k_total {
        let t = k as f64 / k_total as f64;
        let z_before = z.clone();
        for u in 1..=refinement_schedule(k, config) {
            let z_hat = data_consistency_step(&z, &obs_model, config.step_size, config.fidelity)?;
            let z_tilde = path_projection(&z_hat, &z0, t)?;
            z = denoise(field, &z_tilde, t);
            if !z.is_finite() {
                return Err(Error::Divergence {
                    step: k,
                    context: format!("non-finite estimate at inner refinement {u}"),
                });
            }
        }
        let change_norm = z
            .values()
            .iter()
            .zip(z_before.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        steps.push(OuterStepDiag {
            k,
            t,
            fidelity: data_fidelity(&z, &obs_model, config.fidelity)?,
            change_norm,
        });
    }

    let map = denormalize(&z, transform);
    Ok((
        map,
        ReconstructionRun {
            seed,
            initial_noise: z0,
            steps,
        },
    ))
}
