//! The active measurement loop and its baselines.
//!
//! Each time slot reconstructs an ensemble from the measurements so far,
//! evaluates the estimate, derives the variance map, plans the next
//! trajectory, and flies it collecting noiseless readings of the ground
//! truth until the sampling budget is spent. The random baseline draws all
//! extra locations up front and evaluates on a sample-count cadence; the
//! greedy baseline flies to the single most uncertain cell per slot.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::flow::VelocityModel;
use crate::grid::{AffineTransform, Cell, GridShape, ObservationSet, RadioMap};
use crate::metrics::nmse;
use crate::planner::{plan_slot, uaps_search, PlannerConfig, Trajectory};
use crate::pnp::PnPConfig;
use crate::seeds::{derive_seed, Stream};
use crate::uncertainty::{generate_ensemble, variance_map, Ensemble, UncertaintyMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Proposed,
    Random,
    Greedy,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::Random => "random",
            Strategy::Greedy => "greedy",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which map of the ensemble feeds the NMSE evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    EnsembleMean,
    FirstMember,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Fraction of cells observed before the mission starts.
    pub initial_fraction: f64,
    /// Number of additional samples the mission may collect.
    pub budget: usize,
    /// Per-slot cap on flight steps; `None` means four times the longer
    /// grid side.
    pub slot_step_cap: Option<usize>,
    /// Safety limit on the number of slots.
    pub slot_limit: usize,
    /// Ensemble size for uncertainty estimation.
    pub ensemble_size: usize,
    /// Samples between evaluations of the random baseline.
    pub eval_cadence: usize,
    pub estimate: EstimateKind,
    /// Keep per-slot uncertainty/estimate/trajectory snapshots in memory.
    pub record_snapshots: bool,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            initial_fraction: 0.02,
            budget: 2000,
            slot_step_cap: None,
            slot_limit: 10_000,
            ensemble_size: 5,
            eval_cadence: 100,
            estimate: EstimateKind::EnsembleMean,
            record_snapshots: false,
            seed: 0,
        }
    }
}

impl LoopConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.initial_fraction && self.initial_fraction < 1.0) {
            return Err(Error::InvalidConfig("initial fraction must lie in (0, 1)".into()));
        }
        if self.slot_limit == 0 || self.eval_cadence == 0 {
            return Err(Error::InvalidConfig("slot limit and eval cadence must be >= 1".into()));
        }
        if self.ensemble_size < 2 {
            return Err(Error::InvalidConfig("ensemble size must be >= 2".into()));
        }
        if let Some(cap) = self.slot_step_cap {
            if cap == 0 {
                return Err(Error::InvalidConfig("slot step cap must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn step_cap(&self, shape: GridShape) -> usize {
        self.slot_step_cap.unwrap_or(4 * shape.rows.max(shape.cols))
    }
}

/// One evaluation record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub slot: usize,
    /// Cumulative flight steps at evaluation time.
    pub steps: usize,
    /// Cumulative collected samples (initial + acquired).
    pub samples: usize,
    pub nmse: f64,
    pub strategy: Strategy,
}

/// Config snapshot written as the first line of every run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub strategy: Strategy,
    pub shape: GridShape,
    pub loop_config: LoopConfig,
    pub pnp_config: PnPConfig,
    pub planner_config: Option<PlannerConfig>,
    pub scenario_seed: Option<u64>,
}

/// Per-slot artifacts kept when `record_snapshots` is on.
#[derive(Debug, Clone)]
pub struct SlotSnapshot {
    pub slot: usize,
    pub uncertainty: UncertaintyMap,
    pub estimate: RadioMap,
    pub candidates: Vec<Cell>,
    pub trajectory: Option<Vec<Cell>>,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<EvalRecord>,
    pub snapshots: Vec<SlotSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<'a> {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    header: std::borrow::Cow<'a, RunHeader>,
}

impl RunLog {
    /// Serializes the log as JSON lines: one header line, one line per
    /// evaluation record. Snapshots are in-memory artifacts and are not
    /// part of the format.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = HeaderLine {
            kind: "header".to_string(),
            header: std::borrow::Cow::Borrowed(&self.header),
        };
        out.push_str(
            &serde_json::to_string(&header).map_err(|e| Error::json("serializing run header", e))?,
        );
        out.push('\n');
        for record in &self.records {
            out.push_str(
                &serde_json::to_string(record)
                    .map_err(|e| Error::json("serializing run record", e))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses a log written by [`RunLog::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<RunLog> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::MalformedLog {
            context: "empty run log".into(),
        })?;
        let header: HeaderLine = serde_json::from_str(first).map_err(|e| Error::MalformedLog {
            context: format!("header line: {e}"),
        })?;
        if header.kind != "header" {
            return Err(Error::MalformedLog {
                context: "first line is not a header".into(),
            });
        }
        let mut records = Vec::new();
        for (no, line) in lines {
            let record: EvalRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLog {
                context: format!("line {}: {e}", no + 1),
            })?;
            records.push(record);
        }
        Ok(RunLog {
            header: header.header.into_owned(),
            records,
            snapshots: Vec::new(),
        })
    }

    pub fn final_nmse(&self) -> Option<f64> {
        self.records.last().map(|r| r.nmse)
    }
}

/// Uniformly random distinct initial observations covering
/// `floor(fraction * cells)` cells, measured exactly from the truth.
pub fn init_observations(
    truth: &RadioMap,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    let shape = truth.shape();
    let count = (fraction * shape.cell_count() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidConfig(format!(
            "initial fraction {fraction} selects no cells on a {shape} grid"
        )));
    }
    // prefix of a seeded permutation: equal seeds nest across fractions
    let mut indices: Vec<usize> = (0..shape.cell_count()).collect();
    for k in (1..indices.len()).rev() {
        indices.swap(k, rng.random_range(0..=k));
    }
    let mut obs = ObservationSet::new(shape);
    for &idx in indices.iter().take(count) {
        let cell = shape.cell_at(idx);
        obs.insert(cell, truth.get(cell))?;
    }
    Ok(obs)
}

/// Result of walking a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcquireOutcome {
    pub new_samples: usize,
    pub steps_flown: usize,
    pub end: Cell,
}

/// Walks the trajectory cell by cell, measuring every not-yet-observed
/// cell until `remaining_budget` new samples are collected; stops at the
/// cell that exhausts the budget.
pub fn acquire_along(
    trajectory: &Trajectory,
    truth: &RadioMap,
    obs: &mut ObservationSet,
    remaining_budget: usize,
) -> Result<AcquireOutcome> {
    crate::grid::check_same_shape(truth.shape(), obs.shape())?;
    let mut new_samples = 0;
    let mut steps_flown = 0;
    let mut end = trajectory.start();
    for (idx, &cell) in trajectory.cells().iter().enumerate() {
        steps_flown = idx;
        end = cell;
        if new_samples == remaining_budget {
            break;
        }
        if !obs.contains(cell) {
            obs.insert(cell, truth.get(cell))?;
            new_samples += 1;
            if new_samples == remaining_budget {
                break;
            }
        }
    }
    Ok(AcquireOutcome {
        new_samples,
        steps_flown,
        end,
    })
}

fn starting_position(shape: GridShape) -> Cell {
    Cell::new(shape.rows / 2, shape.cols / 2)
}

fn evaluate(truth: &RadioMap, ensemble: &Ensemble, kind: EstimateKind) -> Result<(RadioMap, f64)> {
    let estimate = match kind {
        EstimateKind::EnsembleMean => ensemble.mean_map(),
        EstimateKind::FirstMember => ensemble.members()[0].clone(),
    };
    let err = nmse(truth, &estimate)?;
    Ok((estimate, err))
}

/// Runs the full uncertainty-guided mission.
pub fn run_active<V: VelocityModel>(
    truth: &RadioMap,
    field: &V,
    transform: AffineTransform,
    loop_config: &LoopConfig,
    pnp_config: &PnPConfig,
    planner_config: &PlannerConfig,
    scenario_seed: Option<u64>,
) -> Result<RunLog> {
    loop_config.validate()?;
    pnp_config.validate()?;
    planner_config.validate()?;
    let shape = truth.shape();
    let seed = loop_config.seed;

    let mut rng_init =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::InitObservations, 0));
    let mut obs = init_observations(truth, loop_config.initial_fraction, &mut rng_init)?;

    let mut log = RunLog {
        header: RunHeader {
            strategy: Strategy::Proposed,
            shape,
            loop_config: loop_config.clone(),
            pnp_config: pnp_config.clone(),
            planner_config: Some(planner_config.clone()),
            scenario_seed,
        },
        records: Vec::new(),
        snapshots: Vec::new(),
    };

    let mut uav = starting_position(shape);
    let mut budget_left = loop_config.budget;
    let mut cum_steps = 0usize;
    let cap = loop_config.step_cap(shape);

    for slot in 0..=loop_config.slot_limit {
        let ensemble = generate_ensemble(
            field,
            transform,
            &obs,
            pnp_config,
            loop_config.ensemble_size,
            derive_seed(seed, Stream::Ensemble, slot as u64),
        )?;
        let uncertainty = variance_map(&ensemble)?;
        let (estimate, err) = evaluate(truth, &ensemble, loop_config.estimate)?;
        log.records.push(EvalRecord {
            slot,
            steps: cum_steps,
            samples: obs.len(),
            nmse: err,
            strategy: Strategy::Proposed,
        });

        let done =
            budget_left == 0 || obs.len() == shape.cell_count() || slot == loop_config.slot_limit;
        let mut snapshot = loop_config.record_snapshots.then(|| SlotSnapshot {
            slot,
            uncertainty: uncertainty.clone(),
            estimate,
            candidates: Vec::new(),
            trajectory: None,
        });
        if done {
            if let Some(s) = snapshot {
                log.snapshots.push(s);
            }
            break;
        }

        let mut rng_plan =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Planning, slot as u64));
        let planned = plan_slot(&uncertainty, uav, obs.mask(), planner_config, &mut rng_plan)?;
        let trajectory = planned.trajectory.truncated(cap);
        if let Some(s) = snapshot.as_mut() {
            s.candidates = planned.candidates.cells().to_vec();
            s.trajectory = Some(trajectory.cells().to_vec());
        }
        if let Some(s) = snapshot {
            log.snapshots.push(s);
        }

        let outcome = acquire_along(&trajectory, truth, &mut obs, budget_left)?;
        budget_left -= outcome.new_samples;
        cum_steps += outcome.steps_flown;
        uav = outcome.end;
    }
    Ok(log)
}

/// Random-sampling baseline: the whole budget is drawn uniformly without
/// replacement up front; reconstruction quality is evaluated every
/// `eval_cadence` samples.
pub fn run_random_baseline<V: VelocityModel>(
    truth: &RadioMap,
    field: &V,
    transform: AffineTransform,
    loop_config: &LoopConfig,
    pnp_config: &PnPConfig,
    scenario_seed: Option<u64>,
) -> Result<RunLog> {
    loop_config.validate()?;
    pnp_config.validate()?;
    let shape = truth.shape();
    let seed = loop_config.seed;

    let mut rng_init =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::InitObservations, 0));
    let init_obs = init_observations(truth, loop_config.initial_fraction, &mut rng_init)?;

    let mut picks: Vec<Cell> = init_obs.unsampled_cells();
    let mut rng_pick =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Planning, u64::MAX));
    for k in (1..picks.len()).rev() {
        picks.swap(k, rng_pick.random_range(0..=k));
    }
    picks.truncate(loop_config.budget);

    // evaluation milestones in consumed extra samples
    let mut milestones: Vec<usize> = (0..)
        .map(|k| k * loop_config.eval_cadence)
        .take_while(|&s| s < picks.len())
        .collect();
    milestones.push(picks.len());

    let mut log = RunLog {
        header: RunHeader {
            strategy: Strategy::Random,
            shape,
            loop_config: loop_config.clone(),
            pnp_config: pnp_config.clone(),
            planner_config: None,
            scenario_seed,
        },
        records: Vec::new(),
        snapshots: Vec::new(),
    };

    for (eval_idx, &consumed) in milestones.iter().enumerate() {
        let mut obs = init_obs.clone();
        for &cell in &picks[..consumed] {
            obs.insert(cell, truth.get(cell))?;
        }
        let ensemble = generate_ensemble(
            field,
            transform,
            &obs,
            pnp_config,
            loop_config.ensemble_size,
            derive_seed(seed, Stream::Ensemble, eval_idx as u64),
        )?;
        let (estimate, err) = evaluate(truth, &ensemble, loop_config.estimate)?;
        if loop_config.record_snapshots {
            log.snapshots.push(SlotSnapshot {
                slot: eval_idx,
                uncertainty: variance_map(&ensemble)?,
                estimate,
                candidates: Vec::new(),
                trajectory: None,
            });
        }
        log.records.push(EvalRecord {
            slot: eval_idx,
            steps: 0,
            samples: obs.len(),
            nmse: err,
            strategy: Strategy::Random,
        });
    }
    Ok(log)
}

/// Greedy baseline: each slot flies to the single unsampled cell with the
/// highest uncertainty (ties broken by row-major cell order).
pub fn run_greedy_baseline<V: VelocityModel>(
    truth: &RadioMap,
    field: &V,
    transform: AffineTransform,
    loop_config: &LoopConfig,
    pnp_config: &PnPConfig,
    planner_config: &PlannerConfig,
    scenario_seed: Option<u64>,
) -> Result<RunLog> {
    loop_config.validate()?;
    pnp_config.validate()?;
    planner_config.validate()?;
    let shape = truth.shape();
    let seed = loop_config.seed;

    let mut rng_init =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::InitObservations, 0));
    let mut obs = init_observations(truth, loop_config.initial_fraction, &mut rng_init)?;

    let mut log = RunLog {
        header: RunHeader {
            strategy: Strategy::Greedy,
            shape,
            loop_config: loop_config.clone(),
            pnp_config: pnp_config.clone(),
            planner_config: Some(planner_config.clone()),
            scenario_seed,
        },
        records: Vec::new(),
        snapshots: Vec::new(),
    };

    let mut uav = starting_position(shape);
    let mut budget_left = loop_config.budget;
    let mut cum_steps = 0usize;
    let cap = loop_config.step_cap(shape);

    for slot in 0..=loop_config.slot_limit {
        let ensemble = generate_ensemble(
            field,
            transform,
            &obs,
            pnp_config,
            loop_config.ensemble_size,
            derive_seed(seed, Stream::Ensemble, slot as u64),
        )?;
        let uncertainty = variance_map(&ensemble)?;
        let (estimate, err) = evaluate(truth, &ensemble, loop_config.estimate)?;
        log.records.push(EvalRecord {
            slot,
            steps: cum_steps,
            samples: obs.len(),
            nmse: err,
            strategy: Strategy::Greedy,
        });
        let _ = estimate;

        if budget_left == 0 || obs.len() == shape.cell_count() || slot == loop_config.slot_limit {
            break;
        }

        let target = greedy_target(&uncertainty, &obs).ok_or(Error::GridExhausted)?;
        let trajectory =
            uaps_search(&uncertainty, uav, target, planner_config.beta)?.truncated(cap);
        let outcome = acquire_along(&trajectory, truth, &mut obs, budget_left)?;
        budget_left -= outcome.new_samples;
        cum_steps += outcome.steps_flown;
        uav = outcome.end;
    }
    Ok(log)
}

/// The unsampled cell with maximal uncertainty, row-major order breaking ties.
pub fn greedy_target(u: &UncertaintyMap, obs: &ObservationSet) -> Option<Cell> {
    let shape = u.shape();
    let mut best: Option<(f64, Cell)> = None;
    for cell in shape.cells() {
        if obs.contains(cell) {
            continue;
        }
        let v = u.get(cell);
        match best {
            Some((bv, _)) if v <= bv => {}
            _ => best = Some((v, cell)),
        }
    }
    best.map(|(_, c)| c)
}
