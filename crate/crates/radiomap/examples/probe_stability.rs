//! Scratch probe: per-outer-step model-space range of sparse reconstructions
//! under different activations.

use radiomap::active::init_observations;
use radiomap::flow::{train, Activation, Arch, TrainConfig, VelocityModel};
use radiomap::grid::{denormalize, normalize};
use radiomap::metrics::nmse;
use radiomap::pnp::{data_consistency_step, path_projection, refinement_schedule, PnPConfig};
use radiomap::scene::{build_dataset, load_dataset, ScenarioParams, Split};
use radiomap::grid::{GridShape, ObservationSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let shape = GridShape::new(32, 32).unwrap();
    let params = ScenarioParams::default();
    let dir = std::env::temp_dir().join("radiomap-probe");
    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    build_dataset(200, shape, &params, 7, Split::Train, &train_dir).unwrap();
    build_dataset(4, shape, &params, 7, Split::Test, &test_dir).unwrap();
    let train_ds = load_dataset(&train_dir).unwrap();
    let test_ds = load_dataset(&test_dir).unwrap();

    let activation = match std::env::var("PROBE_ACT").as_deref() {
        Ok("tanh") => Activation::Tanh,
        _ => Activation::Silu,
    };
    let steps: usize = std::env::var("PROBE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(800);
    let channels: usize = std::env::var("PROBE_CH").ok().and_then(|s| s.parse().ok()).unwrap_or(16);

    let arch = Arch {
        channels,
        hidden_layers: 4,
        activation,
        ..Arch::default()
    };
    let cfg = TrainConfig {
        steps,
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&train_ds, &arch, &cfg).unwrap();
    println!(
        "act={activation:?} ch={channels} steps={steps}: heldout {:.1} vs zero {:.1}",
        result.heldout_loss, result.zero_field_heldout_loss
    );
    let field = result.field;
    let transform = field.transform();

    let truth = &test_ds.maps[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let obs_db = init_observations(truth, 0.02, &mut rng).unwrap();

    // manual reconstruction with range tracing
    let mut obs = ObservationSet::new(shape);
    for &(c, v) in obs_db.entries() {
        obs.insert(c, transform.apply(v)).unwrap();
    }
    let pnp = PnPConfig { step_size: 1.0, ..PnPConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let z0 = radiomap::flow::FlowSource.sample(shape, &mut rng);
    let mut z = z0.clone();
    let k_total = pnp.outer_steps;
    for k in 1..=k_total {
        let t = k as f64 / k_total as f64;
        for _ in 0..refinement_schedule(k, &pnp) {
            let z_hat = data_consistency_step(&z, &obs, pnp.step_size, pnp.fidelity).unwrap();
            let z_tilde = path_projection(&z_hat, &z0, t).unwrap();
            z = radiomap::flow::denoise(&field, &z_tilde, t);
        }
        let (lo, hi) = z.min_max();
        if k % 5 == 0 || k >= 45 || hi.abs() > 2.0 {
            println!("  k={k:2} t={t:.2} range [{lo:8.3}, {hi:8.3}]");
        }
    }
    let out = denormalize(&z, transform);
    println!("  final NMSE {:.3e}", nmse(truth, &out).unwrap());
    let model_truth = normalize(truth, transform);
    let (lo, hi) = model_truth.min_max();
    println!("  truth model range [{lo:.3}, {hi:.3}]");
}
