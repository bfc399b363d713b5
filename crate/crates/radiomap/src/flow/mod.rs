//! Flow matching: linear interpolation paths, the regression loss and its
//! exact gradient, the Euler ODE sampler, and the one-step denoiser.
//!
//! All operations here work in model space (maps affinely scaled to roughly
//! [-1, 1]); the [`VelocityField`] carries the transform between dB space
//! and model space so callers can move back and forth.

mod io;
mod net;
mod train;

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use net::{Activation, Arch, Segment, TimeConditioning, INPUT_CHANNELS};
pub use train::{train, TrainConfig, TrainResult};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::grid::{check_same_shape, AffineTransform, GridShape, RadioMap};
use crate::{Error, Result};

/// Anything that evaluates a velocity `v(t, Z)` over model-space maps.
///
/// Implementations must be pure so that reconstructions and ensembles can
/// share them across threads.
pub trait VelocityModel: Sync {
    fn velocity(&self, t: f64, z: &RadioMap) -> RadioMap;
}

/// Velocity model that always returns zero; used as the training baseline
/// (a zero field leaves the source distribution untouched).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl VelocityModel for ZeroVelocity {
    fn velocity(&self, _t: f64, z: &RadioMap) -> RadioMap {
        RadioMap::constant(z.shape(), 0.0)
    }
}

/// The source distribution of the flow: an independent standard normal per
/// cell in model space.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowSource;

impl FlowSource {
    pub fn sample(&self, shape: GridShape, rng: &mut impl Rng) -> RadioMap {
        let values = (0..shape.cell_count())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        RadioMap::from_raw(shape, values)
    }
}

/// One training triple: source sample, data sample, and the path time.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub source: RadioMap,
    pub target: RadioMap,
    pub t: f64,
}

/// Trained velocity field with its architecture, flat parameters, and the
/// dB-to-model-space transform.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    arch: Arch,
    shape: GridShape,
    transform: AffineTransform,
    train_seed: u64,
    loss_history: Vec<f64>,
    params: Vec<f64>,
}

impl VelocityField {
    /// Freshly initialized (untrained) field.
    pub fn new(arch: Arch, shape: GridShape, transform: AffineTransform, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = arch.init_params(seed);
        Ok(VelocityField {
            arch,
            shape,
            transform,
            train_seed: seed,
            loss_history: Vec::new(),
            params,
        })
    }

    /// Field with explicitly given parameters.
    pub fn with_params(
        arch: Arch,
        shape: GridShape,
        transform: AffineTransform,
        train_seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters for this architecture, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite {
                context: "velocity field parameters".into(),
            });
        }
        Ok(VelocityField {
            arch,
            shape,
            transform,
            train_seed,
            loss_history: Vec::new(),
            params,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn transform(&self) -> AffineTransform {
        self.transform
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn set_history(&mut self, history: Vec<f64>) {
        self.loss_history = history;
    }

    pub(crate) fn set_train_seed(&mut self, seed: u64) {
        self.train_seed = seed;
    }
}

impl VelocityModel for VelocityField {
    fn velocity(&self, t: f64, z: &RadioMap) -> RadioMap {
        let shape = z.shape();
        let out = net::forward(
            &self.arch,
            &self.params,
            shape.rows,
            shape.cols,
            t,
            z.values(),
        );
        RadioMap::from_raw(shape, out)
    }
}

/// Linear interpolation `(1 - t) Z0 + t Z1` along the flow path.
pub fn interpolate_path(z0: &RadioMap, z1: &RadioMap, t: f64) -> Result<RadioMap> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("path time {t} outside [0, 1]")));
    }
    z0.zip_with(z1, |a, b| (1.0 - t) * a + t * b)
}

/// Mean over the batch of the squared Frobenius distance between the
/// predicted velocity and the straight-path velocity `Z1 - Z0`.
pub fn fm_loss<V: VelocityModel>(field: &V, batch: &[FlowSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("flow matching loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for sample in batch {
        check_same_shape(sample.source.shape(), sample.target.shape())?;
        let z_t = interpolate_path(&sample.source, &sample.target, sample.t)?;
        let v = field.velocity(sample.t, &z_t);
        let mut acc = 0.0;
        for ((vv, z1), z0) in v
            .values()
            .iter()
            .zip(sample.target.values())
            .zip(sample.source.values())
        {
            let r = vv - (z1 - z0);
            acc += r * r;
        }
        total += acc;
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`fm_loss`] with respect to every parameter.
pub fn loss_gradient(field: &VelocityField, batch: &[FlowSample]) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(field, batch)?.1)
}

/// Loss value and gradient in one pass; samples are processed in parallel
/// and reduced in batch order.
pub fn loss_and_gradient(field: &VelocityField, batch: &[FlowSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("flow matching loss needs a nonempty batch".into()));
    }
    let per_sample: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|sample| -> Result<(f64, Vec<f64>)> {
            check_same_shape(sample.source.shape(), sample.target.shape())?;
            let shape = sample.source.shape();
            let z_t = interpolate_path(&sample.source, &sample.target, sample.t)?;
            let (out, tape) = net::forward_cached(
                field.arch(),
                field.params(),
                shape.rows,
                shape.cols,
                sample.t,
                z_t.values(),
            );
            let mut loss = 0.0;
            let grad_out: Vec<f64> = out
                .iter()
                .zip(sample.target.values())
                .zip(sample.source.values())
                .map(|((vv, z1), z0)| {
                    let r = vv - (z1 - z0);
                    loss += r * r;
                    2.0 * r
                })
                .collect();
            let mut grad = vec![0.0; field.params().len()];
            net::backward(
                field.arch(),
                field.params(),
                &tape,
                shape.rows,
                shape.cols,
                &grad_out,
                &mut grad,
            );
            Ok((loss, grad))
        })
        .collect::<Result<Vec<_>>>()?;

    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; field.params().len()];
    for (l, g) in &per_sample {
        loss += l;
        for (acc, gv) in grad.iter_mut().zip(g) {
            *acc += gv;
        }
    }
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((loss, grad))
}

/// Explicit Euler integration of the flow ODE from t=0 to t=1.
pub fn euler_integrate<V: VelocityModel>(field: &V, z0: &RadioMap, steps: usize) -> Result<RadioMap> {
    if steps == 0 {
        return Err(Error::InvalidConfig("euler integration needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = field.velocity(t, &z);
        for (zv, vv) in z.values_mut().iter_mut().zip(v.values()) {
            *zv += dt * vv;
        }
        if !z.is_finite() {
            return Err(Error::Divergence {
                step: k + 1,
                context: "euler integration produced non-finite values".into(),
            });
        }
    }
    Ok(z)
}

/// One-step denoiser `Z + (1 - t) v(t, Z)` induced by the velocity field.
pub fn denoise<V: VelocityModel>(field: &V, z: &RadioMap, t: f64) -> RadioMap {
    debug_assert!((0.0..=1.0).contains(&t));
    let v = field.velocity(t, z);
    let mut out = z.clone();
    for (ov, vv) in out.values_mut().iter_mut().zip(v.values()) {
        *ov += (1.0 - t) * vv;
    }
    out
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::grid::Cell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape4() -> GridShape {
        GridShape::new(4, 4).unwrap()
    }

    fn random_map(shape: GridShape, rng: &mut ChaCha8Rng) -> RadioMap {
        RadioMap::from_values(
            shape,
            (0..shape.cell_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn interpolation_hits_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = random_map(shape4(), &mut rng);
        let z1 = random_map(shape4(), &mut rng);
        assert_eq!(interpolate_path(&z0, &z1, 0.0).unwrap(), z0);
        assert_eq!(interpolate_path(&z0, &z1, 1.0).unwrap(), z1);
    }

    #[test]
    fn interpolation_midpoint() {
        let z0 = RadioMap::constant(shape4(), 0.0);
        let z1 = RadioMap::constant(shape4(), 2.0);
        let mid = interpolate_path(&z0, &z1, 0.5).unwrap();
        assert_eq!(mid, RadioMap::constant(shape4(), 1.0));
    }

    #[test]
    fn interpolation_rejects_out_of_range_time() {
        let z = RadioMap::constant(shape4(), 0.0);
        assert!(interpolate_path(&z, &z, -0.1).is_err());
        assert!(interpolate_path(&z, &z, 1.1).is_err());
    }

    #[test]
    fn ideal_field_has_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = random_map(shape4(), &mut rng);
        let z1 = random_map(shape4(), &mut rng);
        let field = IdealPairField {
            source: z0.clone(),
            target: z1.clone(),
        };
        let batch = vec![
            FlowSample {
                source: z0.clone(),
                target: z1.clone(),
                t: 0.3,
            },
            FlowSample {
                source: z0,
                target: z1,
                t: 0.9,
            },
        ];
        assert_eq!(fm_loss(&field, &batch).unwrap(), 0.0);
    }

    #[test]
    fn zero_field_loss_is_mean_squared_path_velocity() {
        // two fixed samples with hand-computed ||Z1 - Z0||_F^2
        let s = GridShape::new(2, 2).unwrap();
        let z0a = RadioMap::from_values(s, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let z1a = RadioMap::from_values(s, vec![1.0, 2.0, 3.0, 4.0]).unwrap(); // 30
        let z0b = RadioMap::from_values(s, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let z1b = RadioMap::from_values(s, vec![0.0, 2.0, 1.0, 3.0]).unwrap(); // 1 + 1 + 0 + 4 = 6
        let batch = vec![
            FlowSample {
                source: z0a,
                target: z1a,
                t: 0.1,
            },
            FlowSample {
                source: z0b,
                target: z1b,
                t: 0.8,
            },
        ];
        let loss = fm_loss(&ZeroVelocity, &batch).unwrap();
        assert!((loss - 18.0).abs() < 1e-12);
    }

    #[test]
    fn loss_is_invariant_to_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch: Vec<FlowSample> = (0..4)
            .map(|_| FlowSample {
                source: random_map(shape4(), &mut rng),
                target: random_map(shape4(), &mut rng),
                t: rng.random_range(0.0..1.0),
            })
            .collect();
        let a = fm_loss(&NegateField, &batch).unwrap();
        batch.reverse();
        let b = fm_loss(&NegateField, &batch).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fm_loss_rejects_empty_batch() {
        assert!(fm_loss(&ZeroVelocity, &[]).is_err());
    }

    #[test]
    fn gradient_is_zero_for_perfectly_fit_zero_targets() {
        // zero-initialized head => zero velocity; targets Z1 - Z0 = 0
        let arch = Arch {
            channels: 4,
            hidden_layers: 2,
            ..Arch::default()
        };
        let field =
            VelocityField::new(arch, shape4(), AffineTransform::identity(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = random_map(shape4(), &mut rng);
        let batch = vec![FlowSample {
            source: z.clone(),
            target: z,
            t: 0.5,
        }];
        let grad = loss_gradient(&field, &batch).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let arch = Arch {
            channels: 3,
            hidden_layers: 2,
            ..Arch::default()
        };
        let mut field =
            VelocityField::new(arch, shape4(), AffineTransform::identity(), 8).unwrap();
        let n = field.params().len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in field.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let batch: Vec<FlowSample> = (0..3)
            .map(|_| FlowSample {
                source: random_map(shape4(), &mut rng),
                target: random_map(shape4(), &mut rng),
                t: rng.random_range(0.0..1.0),
            })
            .collect();
        let full = loss_gradient(&field, &batch).unwrap();
        let mut mean = vec![0.0; n];
        for sample in &batch {
            let g = loss_gradient(&field, std::slice::from_ref(sample)).unwrap();
            for (m, gv) in mean.iter_mut().zip(&g) {
                *m += gv / batch.len() as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = Arch {
            channels: 4,
            hidden_layers: 2,
            ..Arch::default()
        };
        let mut field =
            VelocityField::new(arch.clone(), shape4(), AffineTransform::identity(), 9).unwrap();
        assert!(field.params().len() <= 500);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in field.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let batch: Vec<FlowSample> = (0..2)
            .map(|_| FlowSample {
                source: random_map(shape4(), &mut rng),
                target: random_map(shape4(), &mut rng),
                t: rng.random_range(0.0..1.0),
            })
            .collect();
        let grad = loss_gradient(&field, &batch).unwrap();

        let step = 1e-4;
        for probe in 0..20 {
            let idx = rng.random_range(0..field.params().len());
            let mut plus = field.clone();
            plus.params_mut()[idx] += step;
            let mut minus = field.clone();
            minus.params_mut()[idx] -= step;
            let fd = (fm_loss(&plus, &batch).unwrap() - fm_loss(&minus, &batch).unwrap())
                / (2.0 * step);
            let denom = fd.abs().max(grad[idx].abs()).max(1e-10);
            assert!(
                (fd - grad[idx]).abs() / denom < 1e-4,
                "probe {probe} at {idx}: fd={fd} analytic={}",
                grad[idx]
            );
        }
    }

    #[test]
    fn euler_zero_field_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z0 = random_map(shape4(), &mut rng);
        for steps in [1, 5, 50] {
            assert_eq!(euler_integrate(&ZeroVelocity, &z0, steps).unwrap(), z0);
        }
    }

    #[test]
    fn euler_constant_field_translates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z0 = random_map(shape4(), &mut rng);
        let c = 2.5;
        // dyadic step counts keep the arithmetic exact
        for steps in [1usize, 2, 4, 8] {
            let out = euler_integrate(&ConstField(c), &z0, steps).unwrap();
            for (o, z) in out.values().iter().zip(z0.values()) {
                assert_eq!(*o, z + c);
            }
        }
        let out = euler_integrate(&ConstField(c), &z0, 7).unwrap();
        for (o, z) in out.values().iter().zip(z0.values()) {
            assert!((o - (z + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_approximates_exponential_decay() {
        let z0 = RadioMap::constant(shape4(), 1.0);
        let out = euler_integrate(&NegateField, &z0, 1000).unwrap();
        let expected = (-1f64).exp();
        for v in out.values() {
            assert!((v - expected).abs() < 1e-2);
        }
    }

    #[test]
    fn euler_aborts_on_non_finite_state() {
        let z0 = RadioMap::constant(shape4(), 1.0);
        match euler_integrate(&AmplifyField(1e300), &z0, 8) {
            Err(crate::Error::Divergence { step, .. }) => assert!(step >= 1 && step <= 8),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn denoise_is_identity_at_t_one_and_for_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_map(shape4(), &mut rng);
        assert_eq!(denoise(&NegateField, &z, 1.0), z);
        for t in [0.0, 0.3, 0.8] {
            assert_eq!(denoise(&ZeroVelocity, &z, t), z);
        }
    }

    #[test]
    fn denoise_halfway_example() {
        let z = RadioMap::constant(shape4(), 2.0);
        let out = denoise(&NegateField, &z, 0.5);
        assert_eq!(out, RadioMap::constant(shape4(), 1.0));
    }

    #[test]
    fn denoise_recovers_target_from_ideal_field() {
        let s = shape4();
        // integer-valued maps and dyadic times keep the identity exact
        let z0 = RadioMap::from_values(s, (0..16).map(|k| (k % 5) as f64 - 2.0).collect()).unwrap();
        let z1 = RadioMap::from_values(s, (0..16).map(|k| (k % 7) as f64 - 3.0).collect()).unwrap();
        let field = IdealPairField {
            source: z0.clone(),
            target: z1.clone(),
        };
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let z_t = interpolate_path(&z0, &z1, t).unwrap();
            assert_eq!(denoise(&field, &z_t, t), z1);
        }
        // random time: exact up to rounding
        let z_t = interpolate_path(&z0, &z1, 0.37).unwrap();
        let out = denoise(&field, &z_t, 0.37);
        for (a, b) in out.values().iter().zip(z1.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_source_is_seeded_and_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = FlowSource.sample(shape4(), &mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(10);
        let b = FlowSource.sample(shape4(), &mut rng2);
        assert_eq!(a, b);

        let big = GridShape::new(64, 64).unwrap();
        let sample = FlowSource.sample(big, &mut rng);
        let mean: f64 = sample.values().iter().sum::<f64>() / 4096.0;
        let var: f64 =
            sample.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4096.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn velocity_field_rejects_bad_params() {
        let arch = Arch::default();
        assert!(VelocityField::with_params(
            arch.clone(),
            shape4(),
            AffineTransform::identity(),
            0,
            vec![0.0; 3],
        )
        .is_err());
    }

    #[test]
    fn velocity_field_evaluates_on_any_grid_size() {
        let arch = Arch {
            channels: 4,
            hidden_layers: 2,
            ..Arch::default()
        };
        let field =
            VelocityField::new(arch, shape4(), AffineTransform::identity(), 11).unwrap();
        let other = GridShape::new(6, 9).unwrap();
        let z = RadioMap::constant(other, 0.25);
        let v = field.velocity(0.5, &z);
        assert_eq!(v.shape(), other);
        let _ = v.get(Cell::new(5, 8));
    }
}
