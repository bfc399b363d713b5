//! Uncertainty-aware sampling and trajectory planning.
//!
//! Candidate locations are drawn without replacement with weights that
//! balance uncertainty against travel distance. Trajectories between
//! locations come from a best-first grid search whose step cost discounts
//! uncertain cells, with an admissible remaining-cost heuristic; the
//! visiting order over all candidates is solved exactly by dynamic
//! programming over subsets.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{manhattan, Cell, GridShape};
use crate::uncertainty::UncertaintyMap;
use crate::{Error, Result};

/// Largest candidate count the exact visiting-order solver accepts.
pub const EXACT_ORDER_CAP: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Distance trade-off in the candidate weights (>= 0).
    pub kappa: f64,
    /// Exploration incentive in the step cost, in [0, 1].
    pub beta: f64,
    /// Number of candidate locations per slot.
    pub candidate_count: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            kappa: 0.001,
            beta: 0.9,
            candidate_count: 10,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidConfig("kappa must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        if self.candidate_count == 0 {
            return Err(Error::InvalidConfig("candidate count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uncertainty at `cell` rescaled to [0, 1] over the whole map; a flat map
/// normalizes to 0 everywhere, reducing planning to shortest paths.
pub fn normalized_uncertainty(u: &UncertaintyMap, cell: Cell) -> f64 {
    let (lo, hi) = u.min_max();
    if hi <= lo {
        return 0.0;
    }
    (u.get(cell) - lo) / (hi - lo)
}

/// Cost of stepping into `next_cell`: `1 - beta * normalized uncertainty`,
/// always within `[1 - beta, 1]`.
pub fn step_cost(u: &UncertaintyMap, next_cell: Cell, beta: f64) -> f64 {
    1.0 - beta * normalized_uncertainty(u, next_cell)
}

/// Per-cell entering costs precomputed once per uncertainty map.
#[derive(Debug, Clone)]
pub struct StepCostModel {
    shape: GridShape,
    beta: f64,
    entering: Vec<f64>,
}

impl StepCostModel {
    pub fn new(u: &UncertaintyMap, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        let (lo, hi) = u.min_max();
        let entering = if hi <= lo {
            vec![1.0; u.shape().cell_count()]
        } else {
            u.values()
                .iter()
                .map(|&v| 1.0 - beta * ((v - lo) / (hi - lo)))
                .collect()
        };
        Ok(StepCostModel {
            shape: u.shape(),
            beta,
            entering,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Cost of a step that enters `cell`.
    pub fn entering(&self, cell: Cell) -> f64 {
        self.entering[self.shape.index(cell)]
    }
}

/// Selection weight `U_g / (1 + kappa * d(uav, g))` for each cell.
pub fn candidate_weights(u: &UncertaintyMap, cells: &[Cell], uav_pos: Cell, kappa: f64) -> Vec<f64> {
    cells
        .iter()
        .map(|&g| u.get(g) / (1.0 + kappa * manhattan(uav_pos, g) as f64))
        .collect()
}

/// Distinct candidate cells with the weights they were drawn under.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    cells: Vec<Cell>,
    weights: Vec<f64>,
}

impl CandidateSet {
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Sequential weighted draws without replacement, renormalizing after each
/// draw. Zero-weight cells become eligible (uniformly) only once every
/// positive-weight cell has been taken. Fewer than `n` cells returns all
/// of them.
pub fn sample_candidates(
    cells: &[Cell],
    weights: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<CandidateSet> {
    if cells.len() != weights.len() {
        return Err(Error::InvalidInput(
            "one weight per candidate cell required".into(),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "candidate weights must be finite and nonnegative".into(),
        ));
    }
    let mut remaining: Vec<(Cell, f64)> = cells.iter().copied().zip(weights.iter().copied()).collect();
    let mut picked_cells = Vec::with_capacity(n.min(remaining.len()));
    let mut picked_weights = Vec::with_capacity(n.min(remaining.len()));

    while picked_cells.len() < n && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let idx = if total > 0.0 {
            let x = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut chosen = remaining.len() - 1;
            for (k, (_, w)) in remaining.iter().enumerate() {
                cum += w;
                if x < cum && *w > 0.0 {
                    chosen = k;
                    break;
                }
            }
            // guard against landing past the last positive weight
            if remaining[chosen].1 == 0.0 {
                chosen = remaining
                    .iter()
                    .rposition(|(_, w)| *w > 0.0)
                    .expect("total > 0 implies a positive weight");
            }
            chosen
        } else {
            rng.random_range(0..remaining.len())
        };
        let (cell, w) = remaining.remove(idx);
        picked_cells.push(cell);
        picked_weights.push(w);
    }

    Ok(CandidateSet {
        cells: picked_cells,
        weights: picked_weights,
    })
}

/// A 4-connected path over the grid with its accumulated step costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    cells: Vec<Cell>,
    step_costs: Vec<f64>,
    total_cost: f64,
}

impl Trajectory {
    /// Builds a trajectory from consecutive 4-adjacent cells, pricing each
    /// transition with `costs`.
    pub fn from_cells(cells: Vec<Cell>, costs: &StepCostModel) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput("a trajectory needs at least one cell".into()));
        }
        let mut step_costs = Vec::with_capacity(cells.len().saturating_sub(1));
        for pair in cells.windows(2) {
            if manhattan(pair[0], pair[1]) != 1 {
                return Err(Error::InvalidInput(format!(
                    "cells ({}, {}) and ({}, {}) are not 4-adjacent",
                    pair[0].i, pair[0].j, pair[1].i, pair[1].j
                )));
            }
            step_costs.push(costs.entering(pair[1]));
        }
        let total_cost = step_costs.iter().sum();
        Ok(Trajectory {
            cells,
            step_costs,
            total_cost,
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn step_costs(&self) -> &[f64] {
        &self.step_costs
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn start(&self) -> Cell {
        self.cells[0]
    }

    pub fn end(&self) -> Cell {
        *self.cells.last().unwrap()
    }

    /// Transition count.
    pub fn steps(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }

    /// Keeps at most `max_steps` transitions from the start.
    pub fn truncated(&self, max_steps: usize) -> Trajectory {
        if self.steps() <= max_steps {
            return self.clone();
        }
        let cells = self.cells[..=max_steps].to_vec();
        let step_costs = self.step_costs[..max_steps].to_vec();
        let total_cost = step_costs.iter().sum();
        Trajectory {
            cells,
            step_costs,
            total_cost,
        }
    }
}

/// Open node of the best-first search; `evaluation = cost_so_far + heuristic`.
#[derive(Debug, Clone, Copy)]
struct SearchNode {
    cell_index: usize,
    cost_so_far: f64,
    heuristic: f64,
    evaluation: f64,
}

impl SearchNode {
    fn new(cell_index: usize, cost_so_far: f64, heuristic: f64) -> Self {
        SearchNode {
            cell_index,
            cost_so_far,
            heuristic,
            evaluation: cost_so_far + heuristic,
        }
    }
}

impl PartialEq for SearchNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SearchNode {}

impl PartialOrd for SearchNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SearchNode {
    // max-heap: reverse on evaluation; equal evaluations prefer the node
    // closer to the goal, then the lower cell index, for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .evaluation
            .total_cmp(&self.evaluation)
            .then_with(|| other.heuristic.total_cmp(&self.heuristic))
            .then_with(|| other.cell_index.cmp(&self.cell_index))
    }
}

/// Best-first search from `start` to `goal` under `costs`.
///
/// The heuristic `(1 - beta) * manhattan(g, goal)` never exceeds the true
/// remaining cost (every step costs at least `1 - beta`), so the first
/// settled goal node carries the minimum cost.
pub fn uaps_search_with(costs: &StepCostModel, start: Cell, goal: Cell) -> Result<Trajectory> {
    let shape = costs.shape();
    if !shape.contains(start) || !shape.contains(goal) {
        return Err(Error::InvalidInput("search endpoints outside the grid".into()));
    }
    let n = shape.cell_count();
    let goal_idx = shape.index(goal);
    let h = |idx: usize| (1.0 - costs.beta()) * manhattan(shape.cell_at(idx), goal) as f64;

    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut open = BinaryHeap::new();

    let start_idx = shape.index(start);
    best[start_idx] = 0.0;
    open.push(SearchNode::new(start_idx, 0.0, h(start_idx)));

    while let Some(node) = open.pop() {
        let idx = node.cell_index;
        if settled[idx] {
            continue;
        }
        settled[idx] = true;
        if idx == goal_idx {
            break;
        }
        let cell = shape.cell_at(idx);
        for nb in cell.neighbors4(shape) {
            let nb_idx = shape.index(nb);
            if settled[nb_idx] {
                continue;
            }
            let g = node.cost_so_far + costs.entering(nb);
            if g < best[nb_idx] {
                best[nb_idx] = g;
                parent[nb_idx] = idx;
                open.push(SearchNode::new(nb_idx, g, h(nb_idx)));
            }
        }
    }

    if !settled[goal_idx] {
        return Err(Error::InvalidInput("goal unreachable".into()));
    }

    let mut cells = vec![goal];
    let mut idx = goal_idx;
    while idx != start_idx {
        idx = parent[idx];
        cells.push(shape.cell_at(idx));
    }
    cells.reverse();
    Trajectory::from_cells(cells, costs)
}

/// Minimum-cost trajectory between two cells under the uncertainty-aware
/// step cost.
pub fn uaps_search(u: &UncertaintyMap, start: Cell, goal: Cell, beta: f64) -> Result<Trajectory> {
    let costs = StepCostModel::new(u, beta)?;
    uaps_search_with(&costs, start, goal)
}

/// Directed segment costs between the start position and all candidates.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    /// Cost from the start position to each candidate.
    pub from_start: Vec<f64>,
    /// Directed candidate-to-candidate costs, `between[i][j]` for i -> j.
    pub between: Vec<Vec<f64>>,
}

/// Exact visiting order minimizing the open-path total cost, by dynamic
/// programming over candidate subsets. Ties prefer the earlier candidate
/// index. Candidate counts above [`EXACT_ORDER_CAP`] are rejected.
pub fn visiting_order(costs: &CostMatrix) -> Result<Vec<usize>> {
    let n = costs.from_start.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > EXACT_ORDER_CAP {
        return Err(Error::InvalidConfig(format!(
            "exact visiting-order solver capped at {EXACT_ORDER_CAP} candidates, got {n}"
        )));
    }
    if costs.between.len() != n || costs.between.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput("cost matrix dimensions disagree".into()));
    }

    let full = (1usize << n) - 1;
    let mut dp = vec![f64::INFINITY; (full + 1) * n];
    let mut parent = vec![usize::MAX; (full + 1) * n];
    for j in 0..n {
        dp[(1 << j) * n + j] = costs.from_start[j];
    }
    for mask in 1..=full {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = dp[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nmask = mask | (1 << next);
                let cand = cur + costs.between[last][next];
                if cand < dp[nmask * n + next] {
                    dp[nmask * n + next] = cand;
                    parent[nmask * n + next] = last;
                }
            }
        }
    }

    let mut best_last = 0;
    for last in 1..n {
        if dp[full * n + last] < dp[full * n + best_last] {
            best_last = last;
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    let mut last = best_last;
    while last != usize::MAX {
        order.push(last);
        let prev = parent[mask * n + last];
        mask &= !(1 << last);
        last = prev;
    }
    order.reverse();
    Ok(order)
}

/// Total cost of a visiting order under a cost matrix.
pub fn order_cost(costs: &CostMatrix, order: &[usize]) -> f64 {
    if order.is_empty() {
        return 0.0;
    }
    let mut total = costs.from_start[order[0]];
    for pair in order.windows(2) {
        total += costs.between[pair[0]][pair[1]];
    }
    total
}

/// A planned measurement slot: the sampled candidates, their visiting
/// order, and the full concatenated trajectory.
#[derive(Debug, Clone)]
pub struct PlannedSlot {
    pub candidates: CandidateSet,
    pub order: Vec<usize>,
    pub trajectory: Trajectory,
}

/// Samples candidates from the unsampled cells, orders them exactly, and
/// concatenates the optimal segments into one trajectory.
pub fn plan_slot(
    u: &UncertaintyMap,
    uav_pos: Cell,
    sampled_mask: &[bool],
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<PlannedSlot> {
    config.validate()?;
    let shape = u.shape();
    if sampled_mask.len() != shape.cell_count() {
        return Err(Error::InvalidInput("sampled mask length mismatch".into()));
    }
    let unsampled: Vec<Cell> = shape
        .cells()
        .filter(|&c| !sampled_mask[shape.index(c)])
        .collect();
    if unsampled.is_empty() {
        return Err(Error::GridExhausted);
    }

    let weights = candidate_weights(u, &unsampled, uav_pos, config.kappa);
    let candidates = sample_candidates(&unsampled, &weights, config.candidate_count, rng)?;
    let costs = StepCostModel::new(u, config.beta)?;

    // one search per unordered pair; a reversed optimal path stays optimal
    // because reversing changes every path's cost by the same endpoint term
    let n = candidates.len();
    let start_paths: Vec<Trajectory> = candidates
        .cells()
        .iter()
        .map(|&g| uaps_search_with(&costs, uav_pos, g))
        .collect::<Result<Vec<_>>>()?;
    let mut pair_paths: Vec<Vec<Option<Trajectory>>> = vec![vec![None; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let path = uaps_search_with(&costs, candidates.cells()[i], candidates.cells()[j])?;
            pair_paths[i][j] = Some(path);
        }
    }

    let mut between = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (i.min(j), i.max(j));
            let forward = pair_paths[a][b].as_ref().unwrap().total_cost();
            between[i][j] = if i < j {
                forward
            } else {
                // reverse direction: swap the endpoint entering costs
                forward - costs.entering(candidates.cells()[b]) + costs.entering(candidates.cells()[a])
            };
        }
    }
    let matrix = CostMatrix {
        from_start: start_paths.iter().map(|p| p.total_cost()).collect(),
        between,
    };
    let order = visiting_order(&matrix)?;

    let mut cells: Vec<Cell> = Vec::new();
    cells.push(uav_pos);
    let mut extend_with = |segment: &[Cell]| {
        debug_assert_eq!(segment.first(), cells.last().as_deref().copied().as_ref());
        cells.extend_from_slice(&segment[1..]);
    };
    extend_with(start_paths[order[0]].cells());
    for pair in order.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        let (a, b) = (i.min(j), i.max(j));
        let stored = pair_paths[a][b].as_ref().unwrap();
        if i < j {
            extend_with(stored.cells());
        } else {
            let mut rev = stored.cells().to_vec();
            rev.reverse();
            extend_with(&rev);
        }
    }

    let trajectory = Trajectory::from_cells(cells, &costs)?;
    Ok(PlannedSlot {
        candidates,
        order,
        trajectory,
    })
}
