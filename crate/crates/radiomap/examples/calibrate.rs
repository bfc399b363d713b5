//! Scratch calibration run: trains a desk-scale model and prints
//! reconstruction and active-loop quality numbers.

use std::time::Instant;

use radiomap::active::{
    init_observations, run_active, run_greedy_baseline, run_random_baseline, LoopConfig,
};
use radiomap::flow::{euler_integrate, train, Arch, FlowSource, TrainConfig};
use radiomap::grid::{denormalize, GridShape, ObservationSet};
use radiomap::metrics::nmse;
use radiomap::planner::PlannerConfig;
use radiomap::pnp::{reconstruct, PnPConfig};
use radiomap::scene::{build_dataset, generate_scenario, load_dataset, render_map, ScenarioParams, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[xs.len() / 2]
}

fn main() {
    let t0 = Instant::now();
    let shape = GridShape::new(32, 32).unwrap();
    let params = ScenarioParams::default();
    let dir = std::env::temp_dir().join("radiomap-calibrate");
    std::fs::create_dir_all(&dir).unwrap();

    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    build_dataset(200, shape, &params, 7, Split::Train, &train_dir).unwrap();
    build_dataset(10, shape, &params, 7, Split::Test, &test_dir).unwrap();
    let train_ds = load_dataset(&train_dir).unwrap();
    let test_ds = load_dataset(&test_dir).unwrap();
    println!(
        "[{:6.1}s] dataset built: db range [{:.1}, {:.1}]",
        t0.elapsed().as_secs_f64(),
        train_ds.manifest.db_min,
        train_ds.manifest.db_max
    );

    let arch = Arch {
        channels: 16,
        hidden_layers: 4,
        ..Arch::default()
    };
    let steps: usize = std::env::var("CAL_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(1200);
    let cfg = TrainConfig {
        steps,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&train_ds, &arch, &cfg).unwrap();
    println!(
        "[{:6.1}s] trained {} params, {} steps: heldout {:.2} vs zero-field {:.2}, first loss {:.2}, last {:.2}",
        t0.elapsed().as_secs_f64(),
        result.field.params().len(),
        steps,
        result.heldout_loss,
        result.zero_field_heldout_loss,
        result.field.loss_history()[0],
        result.field.loss_history().last().unwrap()
    );
    let field = result.field;
    let transform = field.transform();

    // unconditioned samples vs truth
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let prior_nmse: Vec<f64> = test_ds
        .maps
        .iter()
        .map(|truth| {
            let z0 = FlowSource.sample(shape, &mut rng);
            let z1 = euler_integrate(&field, &z0, 50).unwrap();
            nmse(truth, &denormalize(&z1, transform)).unwrap()
        })
        .collect();
    println!(
        "[{:6.1}s] unconditioned prior sample NMSE median {:.3}",
        t0.elapsed().as_secs_f64(),
        median(prior_nmse.clone())
    );

    // range sanity of prior samples
    let mut inside = 0usize;
    let mut total = 0usize;
    for _ in 0..5 {
        let z0 = FlowSource.sample(shape, &mut rng);
        let z1 = euler_integrate(&field, &z0, 50).unwrap();
        for &v in z1.values() {
            total += 1;
            if (-1.25..=1.25).contains(&v) {
                inside += 1;
            }
        }
    }
    println!("          prior samples within expanded model range: {:.1}%", 100.0 * inside as f64 / total as f64);

    for gamma in [1.0, 2.0] {
        let pnp_cfg = PnPConfig {
            step_size: gamma,
            ..PnPConfig::default()
        };
        for fraction in [0.02, 0.10, 0.30] {
            let errs: Vec<f64> = test_ds
                .maps
                .iter()
                .enumerate()
                .map(|(i, truth)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
                    let obs = init_observations(truth, fraction, &mut rng).unwrap();
                    let rec = reconstruct(&field, transform, &obs, &pnp_cfg, 77).unwrap();
                    nmse(truth, &rec).unwrap()
                })
                .collect();
            println!(
                "[{:6.1}s] gamma={gamma} fraction={fraction:>4}: median NMSE {:.4}",
                t0.elapsed().as_secs_f64(),
                median(errs)
            );
        }
        // fully observed
        let errs: Vec<f64> = test_ds
            .maps
            .iter()
            .map(|truth| {
                let mut obs = ObservationSet::new(shape);
                for cell in shape.cells() {
                    obs.insert(cell, truth.get(cell)).unwrap();
                }
                let rec = reconstruct(&field, transform, &obs, &pnp_cfg, 77).unwrap();
                nmse(truth, &rec).unwrap()
            })
            .collect();
        println!("          gamma={gamma} fully observed: median NMSE {:.4}", median(errs));
    }

    // one active seed, all strategies
    let scenario_seed = 12345u64;
    let scenario = generate_scenario(shape, &params, scenario_seed).unwrap();
    let truth = render_map(&scenario);
    let pnp_cfg = PnPConfig {
        step_size: 1.0,
        ..PnPConfig::default()
    };
    let loop_cfg = LoopConfig {
        budget: 400,
        seed: 17,
        ..LoopConfig::default()
    };
    let planner_cfg = PlannerConfig::default();

    let t_run = Instant::now();
    let proposed = run_active(&truth, &field, transform, &loop_cfg, &pnp_cfg, &planner_cfg, Some(scenario_seed)).unwrap();
    println!(
        "[{:6.1}s] proposed: {} slots, final NMSE {:.4} ({:.1}s)",
        t0.elapsed().as_secs_f64(),
        proposed.records.len() - 1,
        proposed.final_nmse().unwrap(),
        t_run.elapsed().as_secs_f64()
    );
    let t_run = Instant::now();
    let random = run_random_baseline(&truth, &field, transform, &loop_cfg, &pnp_cfg, Some(scenario_seed)).unwrap();
    println!(
        "[{:6.1}s] random: final NMSE {:.4} ({:.1}s)",
        t0.elapsed().as_secs_f64(),
        random.final_nmse().unwrap(),
        t_run.elapsed().as_secs_f64()
    );
    let t_run = Instant::now();
    let greedy = run_greedy_baseline(&truth, &field, transform, &loop_cfg, &pnp_cfg, &planner_cfg, Some(scenario_seed)).unwrap();
    println!(
        "[{:6.1}s] greedy: {} slots, final NMSE {:.4} ({:.1}s)",
        t0.elapsed().as_secs_f64(),
        greedy.records.len() - 1,
        greedy.final_nmse().unwrap(),
        t_run.elapsed().as_secs_f64()
    );

    for log in [&proposed, &greedy] {
        let last = log.records.last().unwrap();
        let extra = last.samples - log.records[0].samples;
        println!(
            "          {}: {} steps for {} new samples ({:.2} steps/sample)",
            last.strategy,
            last.steps,
            extra,
            last.steps as f64 / extra.max(1) as f64
        );
    }
}
