//! Subcommand implementations.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use radiomap::active::{
    run_active, run_greedy_baseline, run_random_baseline, EstimateKind, LoopConfig, RunLog,
    Strategy,
};
use radiomap::flow::{load_model, save_model, Arch, TrainConfig};
use radiomap::grid::GridShape;
use radiomap::metrics::nmse;
use radiomap::planner::PlannerConfig;
use radiomap::pnp::{self, PnPConfig};
use radiomap::scene::{build_dataset, generate_scenario, load_dataset, render_map, ScenarioParams, Split};
use radiomap::seeds::{derive_seed, Stream};
use radiomap::{Error, Result};
use serde::Serialize;

use crate::raster::{write_gray_png, write_trajectory_png};
use crate::{ActiveArgs, GenArgs, ReconstructArgs, ReportArgs, TrainArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Proposed,
    Random,
    Greedy,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Proposed => Strategy::Proposed,
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Greedy => Strategy::Greedy,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the resolved configuration next to a command's outputs.
fn echo_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("resolved_config.json");
    let json = serde_json::to_vec_pretty(config)
        .map_err(|e| Error::json("serializing resolved config", e))?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

pub fn gen(args: GenArgs) -> Result<()> {
    let shape = GridShape::new(args.size, args.size)?;
    let params = ScenarioParams {
        tx_count: args.tx_count,
        shadowing_sigma: args.shadowing_sigma,
        ..ScenarioParams::default()
    };

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        out: &'a Path,
        count: usize,
        test_count: usize,
        size: usize,
        seed: u64,
        params: &'a ScenarioParams,
    }
    echo_config(
        &args.out,
        &Resolved {
            command: "gen",
            out: &args.out,
            count: args.count,
            test_count: args.test_count,
            size: args.size,
            seed: args.seed,
            params: &params,
        },
    )?;

    let train_manifest = build_dataset(
        args.count,
        shape,
        &params,
        args.seed,
        Split::Train,
        &args.out.join("train"),
    )?;
    println!(
        "wrote {} training maps ({}), dB range [{:.2}, {:.2}]",
        train_manifest.count, shape, train_manifest.db_min, train_manifest.db_max
    );
    if args.test_count > 0 {
        let test_manifest = build_dataset(
            args.test_count,
            shape,
            &params,
            args.seed,
            Split::Test,
            &args.out.join("test"),
        )?;
        println!("wrote {} test maps", test_manifest.count);
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let arch = Arch {
        channels: args.channels,
        hidden_layers: args.layers,
        ..Arch::default()
    };
    let config = TrainConfig {
        steps: args.steps,
        batch_size: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        ..TrainConfig::default()
    };

    let result = radiomap::flow::train(&dataset, &arch, &config)?;
    save_model(&result.field, &args.out)?;

    if let Some(dir) = args.out.parent() {
        #[derive(Serialize)]
        struct Resolved<'a> {
            command: &'static str,
            data: &'a Path,
            out: &'a Path,
            arch: &'a Arch,
            steps: usize,
            batch: usize,
            lr: f64,
            seed: u64,
        }
        echo_config(
            if dir.as_os_str().is_empty() { Path::new(".") } else { dir },
            &Resolved {
                command: "train",
                data: &args.data,
                out: &args.out,
                arch: &arch,
                steps: args.steps,
                batch: args.batch,
                lr: args.lr,
                seed: args.seed,
            },
        )?;
    }

    println!(
        "trained {} parameters over {} steps",
        result.field.params().len(),
        args.steps
    );
    println!(
        "final training loss {:.4} (last step), held-out loss {:.4} vs zero-field baseline {:.4}",
        result.field.loss_history().last().copied().unwrap_or(f64::NAN),
        result.heldout_loss,
        result.zero_field_heldout_loss
    );
    println!("model written to {}", args.out.display());
    Ok(())
}

pub fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let field = load_model(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    if dataset.manifest.shape != field.shape() {
        return Err(Error::ShapeMismatch {
            left: dataset.manifest.shape.to_string(),
            right: field.shape().to_string(),
        });
    }
    let truth = dataset.maps.get(args.index).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "map index {} out of range (dataset has {})",
            args.index, dataset.manifest.count
        ))
    })?;

    let mut rng = rand_seed(derive_seed(args.seed, Stream::InitObservations, 0));
    let obs = radiomap::active::init_observations(truth, args.fraction, &mut rng)?;

    let pnp_config = PnPConfig {
        step_size: args.gamma,
        ..PnPConfig::with_outer_steps(args.outer_steps)
    };
    let map = reconstruct_impl(&field, &obs, &pnp_config, args.seed)?;
    let err = nmse(truth, &map)?;

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_gray_png(&args.out.join("truth.png"), field.shape(), truth.values())?;
    write_gray_png(&args.out.join("reconstruction.png"), field.shape(), map.values())?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        model: &'a Path,
        data: &'a Path,
        index: usize,
        fraction: f64,
        seed: u64,
        pnp: &'a PnPConfig,
        observed_cells: usize,
        nmse: f64,
    }
    echo_config(
        &args.out,
        &Resolved {
            command: "reconstruct",
            model: &args.model,
            data: &args.data,
            index: args.index,
            fraction: args.fraction,
            seed: args.seed,
            pnp: &pnp_config,
            observed_cells: obs.len(),
            nmse: err,
        },
    )?;

    println!("observed {} of {} cells", obs.len(), field.shape().cell_count());
    println!("nmse {err:.6}");
    Ok(())
}

fn reconstruct_impl(
    field: &radiomap::flow::VelocityField,
    obs: &radiomap::grid::ObservationSet,
    config: &PnPConfig,
    seed: u64,
) -> Result<radiomap::grid::RadioMap> {
    pnp::reconstruct(
        field,
        field.transform(),
        obs,
        config,
        derive_seed(seed, Stream::NoiseInit, 0),
    )
}

fn rand_seed(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

pub fn active(args: ActiveArgs) -> Result<()> {
    let field = load_model(&args.model)?;
    let shape = field.shape();
    if let Some(size) = args.size {
        if size != shape.rows || size != shape.cols {
            return Err(Error::ShapeMismatch {
                left: format!("{size}x{size}"),
                right: shape.to_string(),
            });
        }
    }

    let params = ScenarioParams::default();
    let scenario = generate_scenario(shape, &params, args.scenario_seed)?;
    let truth = render_map(&scenario);

    let loop_config = LoopConfig {
        initial_fraction: args.fraction,
        budget: args.budget,
        slot_step_cap: args.slot_cap,
        ensemble_size: args.ensemble,
        eval_cadence: args.eval_cadence,
        estimate: EstimateKind::EnsembleMean,
        record_snapshots: true,
        seed: args.seed,
        ..LoopConfig::default()
    };
    let pnp_config = PnPConfig {
        step_size: args.gamma,
        ..PnPConfig::with_outer_steps(args.outer_steps)
    };
    let planner_config = PlannerConfig {
        kappa: args.kappa,
        beta: args.beta,
        candidate_count: args.candidates,
    };

    let strategy: Strategy = args.strategy.into();
    let log = match strategy {
        Strategy::Proposed => run_active(
            &truth,
            &field,
            field.transform(),
            &loop_config,
            &pnp_config,
            &planner_config,
            Some(args.scenario_seed),
        )?,
        Strategy::Random => run_random_baseline(
            &truth,
            &field,
            field.transform(),
            &loop_config,
            &pnp_config,
            Some(args.scenario_seed),
        )?,
        Strategy::Greedy => run_greedy_baseline(
            &truth,
            &field,
            field.transform(),
            &loop_config,
            &pnp_config,
            &planner_config,
            Some(args.scenario_seed),
        )?,
    };

    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let runlog_path = args.out.join("runlog.jsonl");
    fs::write(&runlog_path, log.to_jsonl()?).map_err(|e| io_err(&runlog_path, e))?;

    let csv_path = args.out.join("nmse_curve.csv");
    let mut csv = String::from("step,samples,nmse\n");
    for r in &log.records {
        csv.push_str(&format!("{},{},{}\n", r.steps, r.samples, r.nmse));
    }
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    write_gray_png(&args.out.join("truth.png"), shape, truth.values())?;
    for snapshot in &log.snapshots {
        let tag = format!("{:03}", snapshot.slot);
        write_gray_png(
            &args.out.join(format!("uncertainty_{tag}.png")),
            shape,
            snapshot.uncertainty.values(),
        )?;
        write_gray_png(
            &args.out.join(format!("estimate_{tag}.png")),
            shape,
            snapshot.estimate.values(),
        )?;
        if let Some(trajectory) = &snapshot.trajectory {
            write_trajectory_png(
                &args.out.join(format!("trajectory_{tag}.png")),
                shape,
                snapshot.uncertainty.values(),
                trajectory,
                &snapshot.candidates,
            )?;
        }
    }

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        model: &'a Path,
        scenario_seed: u64,
        strategy: Strategy,
        loop_config: &'a LoopConfig,
        pnp: &'a PnPConfig,
        planner: &'a PlannerConfig,
    }
    echo_config(
        &args.out,
        &Resolved {
            command: "active",
            model: &args.model,
            scenario_seed: args.scenario_seed,
            strategy,
            loop_config: &loop_config,
            pnp: &pnp_config,
            planner: &planner_config,
        },
    )?;

    let last = log.records.last().expect("at least one evaluation");
    println!(
        "{} finished: {} evaluations, {} samples, {} flight steps, final nmse {:.6}",
        strategy, log.records.len(), last.samples, last.steps, last.nmse
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut logs: Vec<(String, RunLog)> = Vec::new();
    for run in &args.runs {
        let path = if run.is_dir() {
            run.join("runlog.jsonl")
        } else {
            run.clone()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::MalformedLog {
            context: format!("{}: {e}", path.display()),
        })?;
        let log = RunLog::from_jsonl(&text).map_err(|e| match e {
            Error::MalformedLog { context } => Error::MalformedLog {
                context: format!("{}: {context}", path.display()),
            },
            other => other,
        })?;
        let mut label = log.header.strategy.to_string();
        if logs.iter().any(|(l, _)| l == &label) {
            label = format!("{label}-{}", logs.len());
        }
        logs.push((label, log));
    }

    // union of sample counts, ascending
    let mut samples: Vec<usize> = logs
        .iter()
        .flat_map(|(_, log)| log.records.iter().map(|r| r.samples))
        .collect();
    samples.sort_unstable();
    samples.dedup();

    let mut csv = String::from("samples");
    for (label, _) in &logs {
        csv.push(',');
        csv.push_str(label);
    }
    csv.push('\n');
    for &s in &samples {
        csv.push_str(&s.to_string());
        for (_, log) in &logs {
            csv.push(',');
            // last record with samples <= s, if any
            let value = log
                .records
                .iter()
                .take_while(|r| r.samples <= s)
                .last()
                .map(|r| r.nmse);
            if let Some(v) = value {
                csv.push_str(&v.to_string());
            }
        }
        csv.push('\n');
    }
    fs::write(&args.out, &csv).map_err(|e| io_err(&args.out, e))?;
    println!("aligned NMSE table ({} sample points) written to {}", samples.len(), args.out.display());

    for (label, log) in &logs {
        let last = log.records.last();
        if let Some(r) = last {
            println!("{label}: final nmse {:.6} at {} samples, {} steps", r.nmse, r.samples, r.steps);
        }
    }

    let proposed = logs
        .iter()
        .find(|(_, log)| log.header.strategy == Strategy::Proposed)
        .and_then(|(_, log)| log.final_nmse());
    if let Some(final_proposed) = proposed {
        for (label, log) in &logs {
            if log.header.strategy == Strategy::Proposed {
                continue;
            }
            if let Some(final_other) = log.final_nmse() {
                let reduction = (final_other - final_proposed) / final_other * 100.0;
                println!("proposed vs {label}: {reduction:.1}% NMSE reduction at final budget");
            }
        }
    }
    Ok(())
}
