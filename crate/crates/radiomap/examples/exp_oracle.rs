//! Scratch experiment: upper bound on targeting gains. Compares random
//! placement of the extra budget against an oracle that samples the cells
//! with the largest true linear-domain error of the initial estimate.

use radiomap::active::init_observations;
use radiomap::flow::{train, Arch, TrainConfig};
use radiomap::grid::{GridShape, ObservationSet};
use radiomap::metrics::nmse;
use radiomap::pnp::{reconstruct, PnPConfig};
use radiomap::scene::{build_dataset, generate_scenario, load_dataset, render_map, ScenarioParams, Split};
use radiomap::uncertainty::{generate_ensemble, variance_map};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn desk_params() -> ScenarioParams {
    ScenarioParams {
        tx_power_db: (-5.0, 5.0),
        pathloss_exponent: (2.2, 3.2),
        building_count: (2, 4),
        building_size_frac: (0.12, 0.28),
        wall_loss_db: (5.0, 10.0),
        shadowing_sigma: 2.5,
        shadowing_radius: 2,
        floor_db: -120.0,
        ..ScenarioParams::default()
    }
}

fn main() {
    let shape = GridShape::new(32, 32).unwrap();
    let params = desk_params();
    let dir = std::env::temp_dir().join("radiomap-exp-oracle");
    let train_dir = dir.join("train");
    build_dataset(300, shape, &params, 7, Split::Train, &train_dir).unwrap();
    let train_ds = load_dataset(&train_dir).unwrap();
    let arch = Arch {
        channels: env_usize("ORC_CH", 16),
        hidden_layers: 4,
        ..Arch::default()
    };
    let cfg = TrainConfig {
        steps: env_usize("ORC_STEPS", 1500),
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&train_ds, &arch, &cfg).unwrap();
    println!("trained: heldout {:.1} vs zero {:.1}", result.heldout_loss, result.zero_field_heldout_loss);
    let field = result.field;
    let transform = field.transform();
    let pnp = PnPConfig { step_size: 1.0, ..PnPConfig::default() };

    let budget = 400usize;
    for seed in 0..6u64 {
        let scenario = generate_scenario(shape, &params, 20_000 + seed).unwrap();
        let truth = render_map(&scenario);
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let init = init_observations(&truth, 0.02, &mut rng).unwrap();

        // initial ensemble-mean estimate from 2%
        let ens0 = generate_ensemble(&field, transform, &init, &pnp, 5, 9000 + seed * 31).unwrap();
        let est0 = ens0.mean_map();
        let u0 = variance_map(&ens0).unwrap();

        // oracle: budget cells with the largest true linear error
        let mut err_cells: Vec<(usize, f64)> = truth
            .values()
            .iter()
            .zip(est0.values())
            .enumerate()
            .filter(|(k, _)| !init.contains(shape.cell_at(*k)))
            .map(|(k, (m, z))| {
                let pm = 10f64.powf(m / 10.0);
                let pz = 10f64.powf(z / 10.0);
                (k, (pm - pz).abs())
            })
            .collect();
        err_cells.sort_by(|a, b| b.1.total_cmp(&a.1));

        let mut oracle_obs = init.clone();
        for &(k, _) in err_cells.iter().take(budget) {
            let cell = shape.cell_at(k);
            oracle_obs.insert(cell, truth.get(cell)).unwrap();
        }

        // variance-guided one-shot: top-budget variance cells
        let mut var_cells: Vec<(usize, f64)> = u0
            .values()
            .iter()
            .enumerate()
            .filter(|(k, _)| !init.contains(shape.cell_at(*k)))
            .map(|(k, v)| (k, *v))
            .collect();
        var_cells.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut var_obs = init.clone();
        for &(k, _) in var_cells.iter().take(budget) {
            let cell = shape.cell_at(k);
            var_obs.insert(cell, truth.get(cell)).unwrap();
        }

        // same, but variance taken across linear-power member maps
        let lin_members: Vec<Vec<f64>> = ens0
            .members()
            .iter()
            .map(|m| m.values().iter().map(|v| 10f64.powf(v / 10.0)).collect())
            .collect();
        let m_count = lin_members.len() as f64;
        let mut lin_var_cells: Vec<(usize, f64)> = (0..shape.cell_count())
            .filter(|k| !init.contains(shape.cell_at(*k)))
            .map(|k| {
                let mean: f64 = lin_members.iter().map(|m| m[k]).sum::<f64>() / m_count;
                let var: f64 =
                    lin_members.iter().map(|m| (m[k] - mean).powi(2)).sum::<f64>() / m_count;
                (k, var)
            })
            .collect();
        lin_var_cells.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut lin_obs = init.clone();
        for &(k, _) in lin_var_cells.iter().take(budget) {
            let cell = shape.cell_at(k);
            lin_obs.insert(cell, truth.get(cell)).unwrap();
        }

        // random placement
        let mut rand_obs = init.clone();
        let mut rest = init.unsampled_cells();
        rest.shuffle(&mut rng);
        for &cell in rest.iter().take(budget) {
            rand_obs.insert(cell, truth.get(cell)).unwrap();
        }

        let eval = |obs: &ObservationSet, tag: u64| {
            let ens = generate_ensemble(&field, transform, obs, &pnp, 5, 9500 + seed * 57 + tag).unwrap();
            (
                nmse(&truth, &ens.mean_map()).unwrap(),
                nmse(&truth, &ens.linear_mean_map()).unwrap(),
            )
        };
        let (o_db, o_lin) = eval(&oracle_obs, 1);
        let (v_db, v_lin) = eval(&var_obs, 2);
        let (l_db, l_lin) = eval(&lin_obs, 4);
        let (r_db, r_lin) = eval(&rand_obs, 3);
        println!(
            "seed {seed}: oracle {o_db:.4}/{o_lin:.4} db-var-top {v_db:.4}/{v_lin:.4} linear-var-top {l_db:.4}/{l_lin:.4} random {r_db:.4}/{r_lin:.4} (db-mean/linear-mean)"
        );
    }
}
