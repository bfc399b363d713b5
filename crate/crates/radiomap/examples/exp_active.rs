//! Scratch experiment: active-learning win margins across scenario seeds.

use std::time::Instant;

use radiomap::active::{run_active, run_greedy_baseline, run_random_baseline, LoopConfig};
use radiomap::flow::{train, Arch, TrainConfig};
use radiomap::grid::GridShape;
use radiomap::planner::PlannerConfig;
use radiomap::pnp::PnPConfig;
use radiomap::scene::{build_dataset, generate_scenario, load_dataset, render_map, ScenarioParams, Split};
use rayon::prelude::*;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[xs.len() / 2]
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let shape = GridShape::new(32, 32).unwrap();
    let params = match std::env::var("EXP_SCENE").as_deref() {
        Ok("desk") => ScenarioParams {
            tx_power_db: (-5.0, 5.0),
            pathloss_exponent: (2.2, 3.2),
            building_count: (2, 4),
            building_size_frac: (0.12, 0.28),
            wall_loss_db: (5.0, 10.0),
            shadowing_sigma: 2.5,
            shadowing_radius: 2,
            floor_db: -120.0,
            ..ScenarioParams::default()
        },
        Ok("calm") => ScenarioParams {
            tx_power_db: (-5.0, 5.0),
            pathloss_exponent: (2.2, 3.2),
            building_count: (2, 4),
            wall_loss_db: (5.0, 10.0),
            shadowing_sigma: 0.0,
            floor_db: -120.0,
            ..ScenarioParams::default()
        },
        _ => ScenarioParams::default(),
    };
    println!("scene params: {params:?}");
    let dir = std::env::temp_dir().join("radiomap-exp-active");
    let train_dir = dir.join("train");
    build_dataset(env_usize("EXP_DATA", 300), shape, &params, 7, Split::Train, &train_dir).unwrap();
    let train_ds = load_dataset(&train_dir).unwrap();

    let arch = Arch {
        channels: env_usize("EXP_CH", 16),
        hidden_layers: env_usize("EXP_LAYERS", 4),
        ..Arch::default()
    };
    let cfg = TrainConfig {
        steps: env_usize("EXP_STEPS", 1500),
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&train_ds, &arch, &cfg).unwrap();
    println!(
        "[{:6.1}s] trained ch={} steps={}: heldout {:.1} vs zero {:.1}",
        t0.elapsed().as_secs_f64(),
        arch.channels,
        cfg.steps,
        result.heldout_loss,
        result.zero_field_heldout_loss
    );
    let field = result.field;
    let transform = field.transform();

    let gammas: Vec<f64> = std::env::var("EXP_GAMMAS")
        .unwrap_or_else(|_| env_f64("EXP_GAMMA", 1.0).to_string())
        .split(',')
        .map(|tok| tok.parse().unwrap())
        .collect();
    let planner_cfg = PlannerConfig::default();
    let n_seeds = env_usize("EXP_SEEDS", 10);
    let caps: Vec<Option<usize>> = std::env::var("EXP_CAPS")
        .unwrap_or_else(|_| "default".into())
        .split(',')
        .map(|tok| if tok == "default" { None } else { Some(tok.parse().unwrap()) })
        .collect();

    for (gamma, cap) in gammas
        .iter()
        .flat_map(|&g| caps.iter().map(move |&c| (g, c)))
        .collect::<Vec<_>>()
    {
        let pnp_cfg = PnPConfig {
            step_size: gamma,
            ..PnPConfig::default()
        };
        let rows: Vec<(u64, f64, f64, f64, f64, f64)> = (0..n_seeds as u64)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&scenario_seed| {
                let scenario = generate_scenario(shape, &params, 20_000 + scenario_seed).unwrap();
                let truth = render_map(&scenario);
                let loop_cfg = LoopConfig {
                    budget: 400,
                    seed: 500 + scenario_seed,
                    slot_step_cap: cap,
                    ensemble_size: env_usize("EXP_M", 5),
                    ..LoopConfig::default()
                };
                let p = run_active(&truth, &field, transform, &loop_cfg, &pnp_cfg, &planner_cfg, Some(scenario_seed)).unwrap();
                let r = run_random_baseline(&truth, &field, transform, &loop_cfg, &pnp_cfg, Some(scenario_seed)).unwrap();
                let g = run_greedy_baseline(&truth, &field, transform, &loop_cfg, &pnp_cfg, &planner_cfg, Some(scenario_seed)).unwrap();
                let p_last = p.records.last().unwrap();
                let g_last = g.records.last().unwrap();
                let p_steps_per = p_last.steps as f64 / (p_last.samples - p.records[0].samples) as f64;
                let g_steps_per = g_last.steps as f64 / (g_last.samples - g.records[0].samples) as f64;
                (
                    scenario_seed,
                    p.final_nmse().unwrap(),
                    r.final_nmse().unwrap(),
                    g.final_nmse().unwrap(),
                    p_steps_per,
                    g_steps_per,
                )
            })
            .collect();

        let mut p_all = Vec::new();
        let mut r_all = Vec::new();
        let mut g_all = Vec::new();
        for (seed, p, r, g, psp, gsp) in &rows {
            println!(
                "cap={cap:?} seed {seed}: proposed {p:.4} random {r:.4} greedy {g:.4} | steps/sample {psp:.2} vs {gsp:.2}"
            );
            p_all.push(*p);
            r_all.push(*r);
            g_all.push(*g);
        }
        let (mp, mr, mg) = (median(p_all), median(r_all), median(g_all));
        println!(
            "[{:6.1}s] gamma={gamma} cap={cap:?} medians: proposed {mp:.4}, random {mr:.4} (gap {:.1}%), greedy {mg:.4} (gap {:.1}%)",
            t0.elapsed().as_secs_f64(),
            (mr - mp) / mr * 100.0,
            (mg - mp) / mg * 100.0
        );
    }
}
