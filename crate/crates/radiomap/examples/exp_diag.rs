//! Scratch diagnostic: where does the final linear-domain error live, and
//! does the variance map point at it?

use radiomap::active::{run_active, run_random_baseline, LoopConfig};
use radiomap::flow::{train, Arch, TrainConfig};
use radiomap::grid::{GridShape, ObservationSet, RadioMap};
use radiomap::planner::PlannerConfig;
use radiomap::pnp::PnPConfig;
use radiomap::scene::{build_dataset, generate_scenario, load_dataset, render_map, ScenarioParams, Split};

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

/// Pearson correlation.
fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    num / (va.sqrt() * vb.sqrt()).max(1e-300)
}

fn top_power_cells(truth: &RadioMap, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..truth.values().len()).collect();
    idx.sort_by(|&a, &b| truth.values()[b].total_cmp(&truth.values()[a]));
    idx.truncate(k);
    idx
}

fn main() {
    let shape = GridShape::new(32, 32).unwrap();
    let params = ScenarioParams::default();
    let dir = std::env::temp_dir().join("radiomap-exp-diag");
    let train_dir = dir.join("train");
    build_dataset(env_usize("DIAG_DATA", 300), shape, &params, 7, Split::Train, &train_dir).unwrap();
    let train_ds = load_dataset(&train_dir).unwrap();
    let arch = Arch {
        channels: env_usize("DIAG_CH", 16),
        hidden_layers: 4,
        ..Arch::default()
    };
    let cfg = TrainConfig {
        steps: env_usize("DIAG_STEPS", 1500),
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&train_ds, &arch, &cfg).unwrap();
    println!("trained: heldout {:.1} vs zero {:.1}", result.heldout_loss, result.zero_field_heldout_loss);
    let field = result.field;
    let transform = field.transform();

    let pnp_cfg = PnPConfig { step_size: 1.0, ..PnPConfig::default() };
    let planner_cfg = PlannerConfig::default();

    for scenario_seed in [0u64, 5, 6, 8] {
        let scenario = generate_scenario(shape, &params, 20_000 + scenario_seed).unwrap();
        let truth = render_map(&scenario);
        let top30 = top_power_cells(&truth, 30);

        let loop_cfg = LoopConfig {
            budget: 400,
            seed: 500 + scenario_seed,
            record_snapshots: true,
            ..LoopConfig::default()
        };
        let p = run_active(&truth, &field, transform, &loop_cfg, &pnp_cfg, &planner_cfg, Some(scenario_seed)).unwrap();
        let r = run_random_baseline(&truth, &field, transform, &loop_cfg, &pnp_cfg, Some(scenario_seed)).unwrap();

        // variance-vs-error alignment per proposed slot
        println!("seed {scenario_seed}:");
        for snap in &p.snapshots {
            let err_sq: Vec<f64> = truth
                .values()
                .iter()
                .zip(snap.estimate.values())
                .map(|(m, z)| {
                    let pm = 10f64.powf(m / 10.0);
                    let pz = 10f64.powf(z / 10.0);
                    (pm - pz) * (pm - pz)
                })
                .collect();
            let mut u_sorted = snap.uncertainty.values().to_vec();
            u_sorted.sort_by(|a, b| a.total_cmp(b));
            let u_med = u_sorted[u_sorted.len() / 2];
            let u_max = u_sorted[u_sorted.len() - 1];
            let (est_lo, est_hi) = snap.estimate.min_max();
            println!(
                "  slot {}: corr(U, err2) {:+.2}, U max/med {:.0}, est dB range [{:.0}, {:.0}], cand spread {}",
                snap.slot,
                corr(snap.uncertainty.values(), &err_sq),
                u_max / u_med.max(1e-12),
                est_lo,
                est_hi,
                {
                    // mean pairwise manhattan distance of candidates
                    let cells = &snap.candidates;
                    if cells.len() < 2 {
                        0
                    } else {
                        let mut total = 0usize;
                        let mut pairs = 0usize;
                        for i in 0..cells.len() {
                            for j in (i + 1)..cells.len() {
                                total += radiomap::grid::manhattan(cells[i], cells[j]);
                                pairs += 1;
                            }
                        }
                        total / pairs.max(1)
                    }
                }
            );
        }

        // which strategy observed the hot cells?
        let observed_top = |log: &radiomap::active::RunLog, label: &str| {
            // replay the sample sets: use the recorded snapshots' estimates?
            // simpler: recompute final observation sets the same way the runs did
            let _ = log;
            let _ = label;
        };
        let _ = observed_top;
        println!(
            "  final nmse: proposed {:.4} random {:.4} | peak truth dB {:.1}, median dB {:.1}",
            p.final_nmse().unwrap(),
            r.final_nmse().unwrap(),
            truth.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            {
                let mut v = truth.values().to_vec();
                v.sort_by(|a, b| a.total_cmp(b));
                v[v.len() / 2]
            }
        );
        let mut obs_p = ObservationSet::new(shape);
        let _ = &mut obs_p;
        let _ = top30;
    }
}
