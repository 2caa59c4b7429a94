//! Simulation runs, demand-rate sweeps and stability classification.

use std::fmt;

use log::{debug, warn};
use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{execute, DynamicsError, ExecutionReport, ScheduleVector, SystemState};
use crate::policies::SchedulingPolicy;
use crate::solver::Solver;
use crate::stochastic::{sample_step, Purpose, RngStream, StepRealization};
use crate::topology::{compute_routes, NetworkGraph, NetworkModel, NodePair, PairKind, TopologyError, UserPair};

pub const MIN_SERIES_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot classify: {0}")]
    Classification(String),
    #[error("sweep stopped: {0}")]
    Aborted(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityThresholds {
    /// Mean number of zero-backlog steps in the second half of the window
    /// needed to call a cell stable.
    pub min_returns: f64,
    /// Least-squares slope, in demands per step, above which every run must
    /// lie to call a cell unstable.
    pub slope: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds { min_returns: 3.0, slope: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Ambiguous,
    Skipped,
}

impl Stability {
    pub fn as_str(self) -> &'static str {
        match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
            Stability::Ambiguous => "ambiguous",
            Stability::Skipped => "skipped",
        }
    }
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Stability::Stable, Stability::Unstable, Stability::Ambiguous, Stability::Skipped]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown stability label `{s}`"))
    }
}

/// Per-run simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_steps: u64,
    pub n_runs: u64,
    pub seed: u64,
    pub thresholds: StabilityThresholds,
    pub solver: Solver,
    /// Keep every step record in the results.
    pub record_steps: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_steps: 5000,
            n_runs: 10,
            seed: 0,
            thresholds: StabilityThresholds::default(),
            solver: Solver::default(),
            record_steps: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_steps < 1 {
            return Err(HarnessError::Config("n_steps must be at least 1".into()));
        }
        if self.n_runs < 1 {
            return Err(HarnessError::Config("n_runs must be at least 1".into()));
        }
        if !(self.thresholds.min_returns >= 0.0) || !self.thresholds.slope.is_finite() {
            return Err(HarnessError::Config("stability thresholds must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Everything that happened in one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub realization: StepRealization,
    pub decision: Vec<u64>,
    pub executed: Vec<u64>,
    pub failed: Vec<u64>,
    pub served: u64,
    pub budget_exhausted: bool,
    pub total_demand: u64,
    pub total_ebits: u64,
}

/// One step with freshly sampled randomness.
pub fn run_step(
    model: &NetworkModel,
    state: &SystemState,
    policy: &dyn SchedulingPolicy,
    stream: &RngStream,
) -> Result<(SystemState, StepRecord), HarnessError> {
    let realization = sample_step(model, &state.q, stream, state.t);
    run_step_with(model, state, realization, policy, stream)
}

/// One step with the given realization.
pub fn run_step_with(
    model: &NetworkModel,
    state: &SystemState,
    realization: StepRealization,
    policy: &dyn SchedulingPolicy,
    stream: &RngStream,
) -> Result<(SystemState, StepRecord), HarnessError> {
    let mut policy_rng = stream.rng(state.t, 0, Purpose::Policy);
    let decision = policy.decide(model, state, &realization, &mut policy_rng);
    if decision.budget_exhausted {
        warn!("step {}: solver node budget exhausted, using best schedule found", state.t);
    }
    let mut exec_rng = stream.rng(state.t, 0, Purpose::Execution);
    let (mut next, report) = execute(model, state, &realization, &decision.schedule, &mut exec_rng)?;
    next.t = state.t + 1;
    let ExecutionReport { executed, failed, served } = report;
    let record = StepRecord {
        t: state.t,
        realization,
        decision: decision.schedule.0,
        executed,
        failed,
        served,
        budget_exhausted: decision.budget_exhausted,
        total_demand: next.total_demand(),
        total_ebits: next.total_ebits(),
    };
    Ok((next, record))
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `Σ_e d_e(t)` after each step.
    pub series: Vec<u64>,
    pub demand_arrivals: u64,
    pub served: u64,
    pub final_backlog: u64,
    /// Demands removed by clamping rather than service.
    pub clamped: u64,
    pub failed_ops: u64,
    pub budget_exhausted_steps: u64,
    pub steps: Vec<StepRecord>,
}

impl RunResult {
    pub fn average_backlog(&self) -> f64 {
        if self.series.is_empty() {
            return 0.0;
        }
        self.series.iter().map(|&x| x as f64).sum::<f64>() / self.series.len() as f64
    }

    pub fn max_excursion(&self) -> u64 {
        self.series.iter().copied().max().unwrap_or(0)
    }

    /// `arrivals = served + final backlog + clamped`.
    pub fn ledger_balances(&self) -> bool {
        self.demand_arrivals == self.served + self.final_backlog + self.clamped
    }
}

/// Runs `n_steps` from the empty state with the streams of run `run`.
pub fn run_simulation(
    model: &NetworkModel,
    policy: &dyn SchedulingPolicy,
    sim: &SimConfig,
    run: u64,
) -> Result<RunResult, HarnessError> {
    sim.validate()?;
    let stream = RngStream::new(sim.seed, run);
    let mut state = SystemState::empty(model.n_queues());
    let mut out = RunResult {
        series: Vec::with_capacity(sim.n_steps as usize),
        demand_arrivals: 0,
        served: 0,
        final_backlog: 0,
        clamped: 0,
        failed_ops: 0,
        budget_exhausted_steps: 0,
        steps: Vec::new(),
    };
    for _ in 0..sim.n_steps {
        let pending = state.total_demand();
        let (next, record) = run_step(model, &state, policy, &stream)?;
        let arrived: u64 = record.realization.demands.iter().sum();
        out.demand_arrivals += arrived;
        out.served += record.served;
        out.clamped += pending + arrived - record.served - next.total_demand();
        out.failed_ops += record.failed.iter().sum::<u64>();
        out.budget_exhausted_steps += u64::from(record.budget_exhausted);
        out.series.push(next.total_demand());
        if sim.record_steps {
            out.steps.push(record);
        }
        state = next;
    }
    out.final_backlog = state.total_demand();
    assert!(out.ledger_balances(), "demand ledger out of balance: {out:?}");
    Ok(out)
}

fn slope(ys: &[u64]) -> f64 {
    let n = ys.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().map(|&y| y as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y as f64 - mean_y);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Labels a set of total-demand series, one per run.
///
/// Over the second half of the window: stable if the mean count of steps at
/// zero total demand reaches `min_returns`, unstable if every run's
/// least-squares slope exceeds `slope`, ambiguous otherwise.
pub fn classify_stability(series: &[Vec<u64>], thresholds: &StabilityThresholds) -> Result<Stability, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::Classification("no series given".into()));
    }
    if let Some(s) = series.iter().find(|s| s.len() < MIN_SERIES_LEN) {
        return Err(HarnessError::Classification(format!(
            "series of length {} is shorter than {MIN_SERIES_LEN} steps",
            s.len()
        )));
    }
    let tails: Vec<&[u64]> = series.iter().map(|s| &s[s.len() / 2..]).collect();
    let zero_visits =
        tails.iter().map(|t| t.iter().filter(|&&x| x == 0).count() as f64).sum::<f64>() / tails.len() as f64;
    if zero_visits >= thresholds.min_returns {
        return Ok(Stability::Stable);
    }
    if tails.iter().all(|t| slope(t) > thresholds.slope) {
        return Ok(Stability::Unstable);
    }
    Ok(Stability::Ambiguous)
}

/// Demand-rate grid and background traffic of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub parasitic_count: usize,
    pub parasitic_load: f64,
    pub route_removal_prob: f64,
    pub pareto_skip: bool,
}

impl SweepConfig {
    pub fn validate(&self, n_fixed: usize) -> Result<(), HarnessError> {
        for (name, grid) in [("beta1", &self.beta1), ("beta2", &self.beta2)] {
            if grid.is_empty() {
                return Err(HarnessError::Config(format!("{name} grid is empty")));
            }
            if grid.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                return Err(HarnessError::Config(format!("{name} rates must be finite and nonnegative")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(HarnessError::Config(format!("{name} grid must be strictly increasing")));
            }
        }
        if n_fixed == 1 && self.beta2 != [0.0] {
            return Err(HarnessError::Config("with one fixed pair the beta2 grid must be [0]".into()));
        }
        if !(self.parasitic_load.is_finite() && self.parasitic_load >= 0.0) {
            return Err(HarnessError::Config("parasitic load must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.route_removal_prob) {
            return Err(HarnessError::Config("route removal probability must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.beta1.len() * self.beta2.len()
    }

    /// Grid coordinates of cell `index`, `beta1` major.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.beta2.len(), index % self.beta2.len())
    }
}

/// Network, fixed user pairs and memory efficiency shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub graph: NetworkGraph,
    pub fixed: Vec<NodePair>,
    pub eta: f64,
}

impl Scenario {
    pub fn new(graph: NetworkGraph, fixed: Vec<NodePair>, eta: f64) -> Result<Self, HarnessError> {
        if fixed.is_empty() || fixed.len() > 2 {
            return Err(HarnessError::Config(format!("expected 1 or 2 fixed pairs, got {}", fixed.len())));
        }
        if fixed.len() == 2 && fixed[0] == fixed[1] {
            return Err(HarnessError::Config(format!("fixed pair {} given twice", fixed[0])));
        }
        for p in &fixed {
            for n in [p.lo(), p.hi()] {
                if !graph.contains_node(n) {
                    return Err(TopologyError::UnknownNode(n.clone()).into());
                }
            }
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(HarnessError::Config(format!("eta must be in (0, 1], got {eta}")));
        }
        Ok(Scenario { graph, fixed, eta })
    }

    /// Model of run `run`: fixed pairs first, then freshly drawn parasitic
    /// pairs, each with its own routes. All rates start at zero.
    pub fn build_run_model(&self, sweep: &SweepConfig, seed: u64, run: u64) -> Result<NetworkModel, HarnessError> {
        let stream = RngStream::new(seed, run);
        let mut candidates: Vec<NodePair> = Vec::new();
        let nodes: Vec<_> = self.graph.nodes().cloned().collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                let p = NodePair::new(a.clone(), b.clone()).expect("distinct nodes");
                if !self.fixed.contains(&p) {
                    candidates.push(p);
                }
            }
        }
        if candidates.len() < sweep.parasitic_count {
            return Err(HarnessError::Config(format!(
                "{} parasitic pairs requested but only {} node pairs are free",
                sweep.parasitic_count,
                candidates.len()
            )));
        }
        let mut rng = stream.rng(0, 0, Purpose::Parasitic);
        let parasitic: Vec<NodePair> = candidates.choose_multiple(&mut rng, sweep.parasitic_count).cloned().collect();

        let mut pairs = Vec::with_capacity(self.fixed.len() + parasitic.len());
        for (i, endpoints) in self.fixed.iter().chain(&parasitic).enumerate() {
            let mut rng = stream.rng(0, i as u64, Purpose::Routing);
            let routes =
                compute_routes(&self.graph, endpoints.lo(), endpoints.hi(), sweep.route_removal_prob, &mut rng)?;
            let kind = if i < self.fixed.len() { PairKind::Fixed } else { PairKind::Parasitic };
            pairs.push(UserPair { endpoints: endpoints.clone(), beta: 0.0, routes, kind });
        }
        Ok(NetworkModel::build(self.graph.clone(), pairs, self.eta)?)
    }
}

/// Aggregated outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub beta1: f64,
    pub beta2: f64,
    /// Time-mean of total demand, averaged over runs. NaN when skipped.
    pub avg_backlog: f64,
    /// Peak total demand over all runs. NaN when skipped.
    pub max_excursion: f64,
    pub stability: Stability,
    pub served_total: u64,
    pub failed_ops: u64,
    pub budget_exhausted_steps: u64,
    #[serde(skip)]
    pub runs: Vec<RunResult>,
}

impl CellResult {
    pub fn skipped(beta1: f64, beta2: f64) -> Self {
        CellResult {
            beta1,
            beta2,
            avg_backlog: f64::NAN,
            max_excursion: f64::NAN,
            stability: Stability::Skipped,
            served_total: 0,
            failed_ops: 0,
            budget_exhausted_steps: 0,
            runs: Vec::new(),
        }
    }

    pub fn from_runs(
        beta1: f64,
        beta2: f64,
        runs: Vec<RunResult>,
        thresholds: &StabilityThresholds,
    ) -> Result<Self, HarnessError> {
        let series: Vec<Vec<u64>> = runs.iter().map(|r| r.series.clone()).collect();
        let stability = classify_stability(&series, thresholds)?;
        Ok(CellResult {
            beta1,
            beta2,
            avg_backlog: runs.iter().map(RunResult::average_backlog).sum::<f64>() / runs.len() as f64,
            max_excursion: runs.iter().map(RunResult::max_excursion).max().unwrap_or(0) as f64,
            stability,
            served_total: runs.iter().map(|r| r.served).sum(),
            failed_ops: runs.iter().map(|r| r.failed_ops).sum(),
            budget_exhausted_steps: runs.iter().map(|r| r.budget_exhausted_steps).sum(),
            runs,
        })
    }
}

/// Per-run models of a sweep, built once and reused by every cell.
pub fn build_run_models(
    scenario: &Scenario,
    sweep: &SweepConfig,
    sim: &SimConfig,
) -> Result<Vec<NetworkModel>, HarnessError> {
    (0..sim.n_runs).map(|run| scenario.build_run_model(sweep, sim.seed, run)).collect()
}

/// Runs every run of one cell.
pub fn run_cell(
    models: &[NetworkModel],
    policy: &dyn SchedulingPolicy,
    sweep: &SweepConfig,
    sim: &SimConfig,
    beta1: f64,
    beta2: f64,
) -> Result<CellResult, HarnessError> {
    let runs = models
        .par_iter()
        .enumerate()
        .map(|(run, base)| {
            let mut model = base.clone();
            let rates: Vec<f64> = model
                .pairs()
                .iter()
                .enumerate()
                .map(|(i, p)| match (p.kind, i) {
                    (PairKind::Fixed, 0) => beta1,
                    (PairKind::Fixed, _) => beta2,
                    (PairKind::Parasitic, _) => sweep.parasitic_load,
                })
                .collect();
            model.set_demand_rates(&rates);
            run_simulation(&model, policy, sim, run as u64)
        })
        .collect::<Result<Vec<_>, _>>()?;
    CellResult::from_runs(beta1, beta2, runs, &sim.thresholds)
}

/// Sweeps the `(beta1, beta2)` grid.
///
/// Cells are evaluated in anti-diagonal waves so every cell that dominates
/// another from below is finished first. With `pareto_skip`, a cell at or
/// above an unstable cell in both coordinates is not simulated. `done`
/// holds already known cells (by grid index) which are reused as is;
/// `on_cell` sees each newly computed cell; an error from it stops the sweep.
pub fn run_sweep(
    scenario: &Scenario,
    sweep: &SweepConfig,
    sim: &SimConfig,
    policy: &dyn SchedulingPolicy,
    done: &[Option<CellResult>],
    on_cell: &(dyn Fn(usize, &CellResult) -> Result<(), HarnessError> + Sync),
) -> Result<Vec<CellResult>, HarnessError> {
    sim.validate()?;
    sweep.validate(scenario.fixed.len())?;
    let n = sweep.n_cells();
    if !done.is_empty() && done.len() != n {
        return Err(HarnessError::Config(format!("{} known cells for a grid of {n}", done.len())));
    }
    let models = build_run_models(scenario, sweep, sim)?;
    let mut cells: Vec<Option<CellResult>> = if done.is_empty() { vec![None; n] } else { done.to_vec() };
    let (rows, cols) = (sweep.beta1.len(), sweep.beta2.len());

    for wave in 0..rows + cols - 1 {
        let pending: Vec<usize> = (0..n)
            .filter(|&k| {
                let (i, j) = sweep.coords(k);
                i + j == wave && cells[k].is_none()
            })
            .collect();
        let results: Vec<(usize, CellResult)> = pending
            .par_iter()
            .map(|&k| {
                let (i, j) = sweep.coords(k);
                let (b1, b2) = (sweep.beta1[i], sweep.beta2[j]);
                let dominated = sweep.pareto_skip
                    && cells.iter().enumerate().any(|(k2, c)| {
                        let (i2, j2) = sweep.coords(k2);
                        i2 <= i && j2 <= j && c.as_ref().is_some_and(|c| c.stability == Stability::Unstable)
                    });
                let cell = if dominated {
                    debug!("cell ({b1}, {b2}) skipped");
                    CellResult::skipped(b1, b2)
                } else {
                    run_cell(&models, policy, sweep, sim, b1, b2)?
                };
                on_cell(k, &cell)?;
                Ok((k, cell))
            })
            .collect::<Result<_, HarnessError>>()?;
        for (k, cell) in results {
            cells[k] = Some(cell);
        }
    }
    Ok(cells.into_iter().map(|c| c.expect("every cell evaluated")).collect())
}

/// Policy that replays a fixed list of schedules, one per step, then idles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    pub schedules: Vec<ScheduleVector>,
}

impl SchedulingPolicy for ScriptedPolicy {
    fn decide(
        &self,
        model: &NetworkModel,
        state: &SystemState,
        _realization: &StepRealization,
        _rng: &mut dyn rand::RngCore,
    ) -> crate::policies::Decision {
        let schedule = self.schedules.get(state.t as usize).cloned().unwrap_or_else(|| ScheduleVector::zeros(model));
        crate::policies::Decision { schedule, budget_exhausted: false }
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}
