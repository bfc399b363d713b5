//! Flow matching training loop with an adaptive-moment optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{normalize, RadioMap};
use crate::scene::Dataset;
use crate::seeds::{derive_seed, Stream};
use crate::{Error, Result};

use super::{fm_loss, loss_and_gradient, Arch, FlowSample, FlowSource, VelocityField, ZeroVelocity};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("steps and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A trained field plus the held-out comparison against the zero field.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub field: VelocityField,
    pub heldout_loss: f64,
    pub zero_field_heldout_loss: f64,
}

/// Trains a velocity field on a dataset of dB maps.
///
/// Maps are moved to model space with the manifest transform before
/// training. The last tenth of the dataset (at least one map) is held out
/// to compare the final loss against the zero-velocity baseline; a single
/// map dataset is its own held-out set.
pub fn train(dataset: &Dataset, arch: &Arch, config: &TrainConfig) -> Result<TrainResult> {
    arch.validate()?;
    config.validate()?;
    if dataset.maps.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    let shape = dataset.manifest.shape;
    let transform = dataset.model_transform()?;
    let maps: Vec<RadioMap> = dataset.maps.iter().map(|m| normalize(m, transform)).collect();

    let heldout_count = if maps.len() == 1 { 0 } else { (maps.len() / 10).max(1) };
    let train_maps = &maps[..maps.len() - heldout_count];
    let heldout_maps = if heldout_count == 0 { &maps[..] } else { &maps[maps.len() - heldout_count..] };

    let mut field = VelocityField::new(
        arch.clone(),
        shape,
        transform,
        derive_seed(config.seed, Stream::Training, 0),
    )?;
    field.set_train_seed(config.seed);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Training, 1));
    let mut history = Vec::with_capacity(config.steps);

    // adaptive moment estimates
    let n = field.params().len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    for step in 1..=config.steps {
        let batch: Vec<FlowSample> = (0..config.batch_size)
            .map(|_| {
                let target = train_maps[rng.random_range(0..train_maps.len())].clone();
                let source = FlowSource.sample(shape, &mut rng);
                let t: f64 = rng.random_range(0.0..1.0);
                FlowSample { source, target, t }
            })
            .collect();

        let (loss, grad) = loss_and_gradient(&field, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                context: format!("training loss became non-finite ({loss})"),
            });
        }
        history.push(loss);

        let b1t = 1.0 - config.beta1.powi(step as i32);
        let b2t = 1.0 - config.beta2.powi(step as i32);
        let params = field.params_mut();
        for k in 0..n {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
            let m_hat = m[k] / b1t;
            let v_hat = v[k] / b2t;
            params[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        if !field.params().iter().all(|p| p.is_finite()) {
            return Err(Error::Divergence {
                step,
                context: "parameters became non-finite".into(),
            });
        }
    }
    field.set_history(history);

    // fixed held-out batch for the zero-field comparison
    let mut ho_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, Stream::Training, 2));
    let ho_batch: Vec<FlowSample> = (0..16)
        .map(|k| {
            let target = heldout_maps[k % heldout_maps.len()].clone();
            let source = FlowSource.sample(shape, &mut ho_rng);
            let t: f64 = ho_rng.random_range(0.0..1.0);
            FlowSample { source, target, t }
        })
        .collect();
    let heldout_loss = fm_loss(&field, &ho_batch)?;
    let zero_field_heldout_loss = fm_loss(&ZeroVelocity, &ho_batch)?;

    Ok(TrainResult {
        field,
        heldout_loss,
        zero_field_heldout_loss,
    })
}
