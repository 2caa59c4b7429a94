//! Experiment configuration, read from a single TOML document.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swapq_core::harness::{SimConfig, StabilityThresholds, SweepConfig};
use swapq_core::solver::DEFAULT_NODE_BUDGET;
use swapq_core::{memory_efficiency, PolicyKind, RateUnit, Solver, TopologyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path of the offending value, empty for document-level errors.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub physics: PhysicsSection,
    pub pairs: PairsSection,
    pub policies: PoliciesSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySection {
    Grid {
        rows: usize,
        cols: usize,
    },
    HoledGrid {
        rows: usize,
        cols: usize,
        p: f64,
    },
    ErdosRenyi {
        n: usize,
        p: f64,
    },
    WattsStrogatz {
        n: usize,
        k: usize,
        p: f64,
    },
    /// Whitespace-separated `node_a node_b alpha` lines.
    EdgeList {
        path: PathBuf,
    },
}

impl TopologySection {
    pub fn generator(&self) -> Option<TopologyKind> {
        Some(match *self {
            TopologySection::Grid { rows, cols } => TopologyKind::Grid { rows, cols },
            TopologySection::HoledGrid { rows, cols, p } => TopologyKind::HoledGrid { rows, cols, p },
            TopologySection::ErdosRenyi { n, p } => TopologyKind::ErdosRenyi { n, p },
            TopologySection::WattsStrogatz { n, k, p } => TopologyKind::WattsStrogatz { n, k, p },
            TopologySection::EdgeList { .. } => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    /// Time step length in seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Qubit lifetime in seconds; exclusive with `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Per-step memory efficiency; exclusive with `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Uniform ebit generation rate. Optional for edge lists, which carry
    /// per-link rates; when given it overrides them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub rate_unit: RateUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsSection {
    /// One or two `[node_a, node_b]` pairs whose rates are swept.
    pub fixed: Vec<[String; 2]>,
    pub beta1: Vec<f64>,
    #[serde(default = "zero_grid")]
    pub beta2: Vec<f64>,
    #[serde(default = "default_parasitic_count")]
    pub parasitic_count: usize,
    #[serde(default = "zero_grid")]
    pub parasitic_loads: Vec<f64>,
    #[serde(default = "default_removal")]
    pub route_removal_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoliciesSection {
    pub kinds: Vec<PolicyKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_steps")]
    pub n_steps: u64,
    #[serde(default = "default_runs")]
    pub n_runs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_min_returns")]
    pub stable_min_returns: f64,
    #[serde(default = "default_slope")]
    pub unstable_slope: f64,
    #[serde(default = "default_budget")]
    pub solver_node_budget: u64,
    #[serde(default = "default_true")]
    pub pareto_skip: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n_steps: default_steps(),
            n_runs: default_runs(),
            seed: 0,
            stable_min_returns: default_min_returns(),
            unstable_slope: default_slope(),
            solver_node_budget: default_budget(),
            pareto_skip: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    #[default]
    Off,
    /// One NDJSON file per cell with every step of every run.
    Steps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub trace: TraceLevel,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), trace: TraceLevel::Off }
    }
}

fn default_dt() -> f64 {
    1.0
}

fn zero_grid() -> Vec<f64> {
    vec![0.0]
}

fn default_parasitic_count() -> usize {
    8
}

fn default_removal() -> f64 {
    0.5
}

fn default_steps() -> u64 {
    5000
}

fn default_runs() -> u64 {
    10
}

fn default_min_returns() -> f64 {
    StabilityThresholds::default().min_returns
}

fn default_slope() -> f64 {
    StabilityThresholds::default().slope
}

fn default_budget() -> u64 {
    DEFAULT_NODE_BUDGET
}

fn default_true() -> bool {
    true
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("", e.to_string().trim_end()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner().message().trim_end())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative edge-list path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let TopologySection::EdgeList { path: list } = &mut cfg.topology {
            if list.is_relative() {
                if let Some(dir) = path.parent() {
                    *list = dir.join(&*list);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |path: &str, msg: String| Err(ConfigError::new(path, msg));
        let prob = |p: f64| (0.0..=1.0).contains(&p);

        match self.topology {
            TopologySection::Grid { rows, cols } | TopologySection::HoledGrid { rows, cols, .. } if rows * cols < 2 => {
                return err("topology", format!("grid needs at least two nodes, got {rows}x{cols}"));
            }
            TopologySection::HoledGrid { p, .. }
            | TopologySection::ErdosRenyi { p, .. }
            | TopologySection::WattsStrogatz { p, .. }
                if !prob(p) =>
            {
                return err("topology.p", format!("must be in [0, 1], got {p}"));
            }
            TopologySection::HoledGrid { p, .. } if p >= 1.0 => {
                return err("topology.p", "removing every node leaves no network".into());
            }
            TopologySection::ErdosRenyi { n, .. } if n < 2 => {
                return err("topology.n", format!("must be at least 2, got {n}"));
            }
            TopologySection::WattsStrogatz { n, k, .. } if k < 2 || k % 2 != 0 || k >= n => {
                return err("topology.k", format!("must be even with 2 <= k < n, got k={k}, n={n}"));
            }
            _ => {}
        }

        let ph = &self.physics;
        if !(ph.dt > 0.0 && ph.dt.is_finite()) {
            return err("physics.dt", format!("must be positive, got {}", ph.dt));
        }
        match (ph.tau, ph.eta) {
            (Some(_), Some(_)) => return err("physics", "`tau` and `eta` are mutually exclusive; give one".into()),
            (None, None) => return err("physics", "one of `tau` or `eta` is required".into()),
            (Some(tau), None) if !(tau > 0.0 && tau.is_finite()) => {
                return err("physics.tau", format!("must be positive, got {tau}"));
            }
            (None, Some(eta)) if !(eta > 0.0 && eta <= 1.0) => {
                return err("physics.eta", format!("must be in (0, 1], got {eta}"));
            }
            _ => {}
        }
        match ph.alpha {
            Some(a) if !(a >= 0.0 && a.is_finite()) => {
                return err("physics.alpha", format!("must be finite and nonnegative, got {a}"));
            }
            None if !matches!(self.topology, TopologySection::EdgeList { .. }) => {
                return err("physics.alpha", "required for generated topologies".into());
            }
            _ => {}
        }

        let pairs = &self.pairs;
        if pairs.fixed.is_empty() || pairs.fixed.len() > 2 {
            return err("pairs.fixed", format!("expected one or two pairs, got {}", pairs.fixed.len()));
        }
        for [a, b] in &pairs.fixed {
            if a == b {
                return err("pairs.fixed", format!("pair endpoints must differ, got {a} twice"));
            }
        }
        if pairs.fixed.len() == 2 {
            let norm = |[a, b]: &[String; 2]| if a <= b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
            if norm(&pairs.fixed[0]) == norm(&pairs.fixed[1]) {
                return err("pairs.fixed", "the two fixed pairs coincide".into());
            }
        }
        for (key, grid) in [("pairs.beta1", &pairs.beta1), ("pairs.beta2", &pairs.beta2)] {
            check_grid(key, grid)?;
        }
        if pairs.fixed.len() == 1 && pairs.beta2 != [0.0] {
            return err("pairs.beta2", "must be [0] or omitted with a single fixed pair".into());
        }
        check_grid("pairs.parasitic_loads", &pairs.parasitic_loads)?;
        if !prob(pairs.route_removal_prob) {
            return err("pairs.route_removal_prob", format!("must be in [0, 1], got {}", pairs.route_removal_prob));
        }

        if self.policies.kinds.is_empty() {
            return err("policies.kinds", "at least one policy is required".into());
        }
        let mut seen = BTreeSet::new();
        for k in &self.policies.kinds {
            if !seen.insert(*k) {
                return err("policies.kinds", format!("`{k}` listed twice"));
            }
        }

        let sim = &self.simulation;
        if sim.n_steps < 1 {
            return err("simulation.n_steps", "must be at least 1".into());
        }
        if sim.n_steps < swapq_core::harness::MIN_SERIES_LEN as u64 {
            return err(
                "simulation.n_steps",
                format!("must be at least {} to classify stability", swapq_core::harness::MIN_SERIES_LEN),
            );
        }
        if sim.n_runs < 1 {
            return err("simulation.n_runs", "must be at least 1".into());
        }
        if !(sim.stable_min_returns >= 0.0 && sim.stable_min_returns.is_finite()) {
            return err("simulation.stable_min_returns", "must be finite and nonnegative".into());
        }
        if !(sim.unstable_slope >= 0.0 && sim.unstable_slope.is_finite()) {
            return err("simulation.unstable_slope", "must be finite and nonnegative".into());
        }
        if sim.solver_node_budget < 1 {
            return err("simulation.solver_node_budget", "must be at least 1".into());
        }
        Ok(())
    }

    /// Memory efficiency per step, from `eta` or from `tau` and `dt`.
    pub fn eta(&self) -> f64 {
        match (self.physics.eta, self.physics.tau) {
            (Some(eta), _) => eta,
            (None, Some(tau)) => memory_efficiency(self.physics.dt, tau).expect("validated"),
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn per_step(&self, rate: f64) -> f64 {
        self.physics.rate_unit.to_per_step(rate, self.physics.dt)
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            n_steps: s.n_steps,
            n_runs: s.n_runs,
            seed: s.seed,
            thresholds: StabilityThresholds { min_returns: s.stable_min_returns, slope: s.unstable_slope },
            solver: Solver::new(s.solver_node_budget),
            record_steps: self.output.trace == TraceLevel::Steps,
        }
    }

    /// Sweep at parasitic load `load` (in configured units).
    pub fn sweep_config(&self, load: f64) -> SweepConfig {
        let p = &self.pairs;
        SweepConfig {
            beta1: p.beta1.iter().map(|&b| self.per_step(b)).collect(),
            beta2: p.beta2.iter().map(|&b| self.per_step(b)).collect(),
            parasitic_count: p.parasitic_count,
            parasitic_load: self.per_step(load),
            route_removal_prob: p.route_removal_prob,
            pareto_skip: self.simulation.pareto_skip,
        }
    }
}

fn check_grid(key: &str, grid: &[f64]) -> Result<(), ConfigError> {
    if grid.is_empty() {
        return Err(ConfigError::new(key, "must not be empty"));
    }
    if let Some(b) = grid.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(ConfigError::new(key, format!("rates must be finite and nonnegative, got {b}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError::new(key, "must be strictly increasing"));
    }
    Ok(())
}
