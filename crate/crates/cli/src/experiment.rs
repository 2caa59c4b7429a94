//! Runs every (policy, parasitic load) sweep of a config and writes results.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use swapq_core::harness::{run_sweep, CellResult, HarnessError, Scenario, Stability};
use swapq_core::topology::{generate_topology, parse_edge_list};
use swapq_core::{BuiltinPolicy, NetworkGraph, NodeId, NodePair, PolicyKind, TopologyError};

use crate::config::{ConfigError, ExperimentConfig, TopologySection};

pub const CSV_HEADER: [&str; 7] =
    ["beta1", "beta2", "avg_backlog", "max_excursion", "stability", "served_total", "failed_ops"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Topology(#[from] TopologyError),
}

impl ExperimentError {
    /// 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces `output.dir`.
    pub out_dir: Option<PathBuf>,
    /// Stop each sweep after this many newly computed cells, leaving its
    /// partial file behind for a later resume.
    pub stop_after_cells: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub csv_files: Vec<PathBuf>,
    pub summary: PathBuf,
}

/// Network described by the topology and physics sections.
pub fn build_graph(cfg: &ExperimentConfig) -> Result<NetworkGraph, ExperimentError> {
    let mut graph = match &cfg.topology {
        TopologySection::EdgeList { path } => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let mut g = parse_edge_list(&text).map_err(|e| ConfigError::new("topology.path", e.to_string()))?;
            let rates: Vec<(NodePair, f64)> = g.edges().map(|(p, a)| (p.clone(), cfg.per_step(a))).collect();
            let mut scaled = NetworkGraph::new();
            for (p, a) in rates {
                scaled.add_edge(p.lo().clone(), p.hi().clone(), a)?;
            }
            std::mem::swap(&mut g, &mut scaled);
            g
        }
        other => {
            let kind = other.generator().expect("generated topology");
            let alpha = cfg.per_step(cfg.physics.alpha.expect("validated"));
            generate_topology(&kind, alpha, cfg.simulation.seed)?
        }
    };
    if let Some(alpha) = cfg.physics.alpha {
        graph.set_uniform_rate(cfg.per_step(alpha));
    }
    Ok(graph)
}

pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario, ExperimentError> {
    let graph = build_graph(cfg)?;
    let mut fixed = Vec::new();
    for [a, b] in &cfg.pairs.fixed {
        for n in [a, b] {
            if !graph.contains_node(&NodeId::new(n.as_str())) {
                return Err(ConfigError::new("pairs.fixed", format!("node `{n}` is not in the topology")).into());
            }
        }
        fixed.push(NodePair::of(a, b).expect("validated distinct"));
    }
    Scenario::new(graph, fixed, cfg.eta()).map_err(|e| ConfigError::new("pairs", e.to_string()).into())
}

pub fn grid_file_stem(policy: PolicyKind, load: f64) -> String {
    format!("grid_{policy}_{load}")
}

fn cell_row(cell: &CellResult) -> [String; 7] {
    [
        cell.beta1.to_string(),
        cell.beta2.to_string(),
        cell.avg_backlog.to_string(),
        cell.max_excursion.to_string(),
        cell.stability.to_string(),
        cell.served_total.to_string(),
        cell.failed_ops.to_string(),
    ]
}

pub fn write_grid_csv(path: &Path, cells: &[CellResult]) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| ExperimentError::Io { path: path.to_path_buf(), source: e.into() };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for cell in cells {
        w.write_record(cell_row(cell)).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GridRow {
    pub beta1: f64,
    pub beta2: f64,
    pub avg_backlog: f64,
    pub max_excursion: f64,
    pub stability: Stability,
    pub served_total: u64,
    pub failed_ops: u64,
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>, ExperimentError> {
    let mut r =
        csv::Reader::from_path(path).map_err(|e| ExperimentError::Io { path: path.into(), source: e.into() })?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<GridRow>, _>>()
        .map_err(|e| ExperimentError::Io { path: path.into(), source: e.into() })?;
    Ok(rows)
}

/// Cell as stored in a partial file; NaN becomes `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredCell {
    index: usize,
    beta1: f64,
    beta2: f64,
    avg_backlog: Option<f64>,
    max_excursion: Option<f64>,
    stability: Stability,
    served_total: u64,
    failed_ops: u64,
    budget_exhausted_steps: u64,
}

impl StoredCell {
    fn new(index: usize, c: &CellResult) -> Self {
        let finite = |x: f64| if x.is_nan() { None } else { Some(x) };
        StoredCell {
            index,
            beta1: c.beta1,
            beta2: c.beta2,
            avg_backlog: finite(c.avg_backlog),
            max_excursion: finite(c.max_excursion),
            stability: c.stability,
            served_total: c.served_total,
            failed_ops: c.failed_ops,
            budget_exhausted_steps: c.budget_exhausted_steps,
        }
    }

    fn into_cell(self) -> CellResult {
        let mut c = CellResult::skipped(self.beta1, self.beta2);
        c.avg_backlog = self.avg_backlog.unwrap_or(f64::NAN);
        c.max_excursion = self.max_excursion.unwrap_or(f64::NAN);
        c.stability = self.stability;
        c.served_total = self.served_total;
        c.failed_ops = self.failed_ops;
        c.budget_exhausted_steps = self.budget_exhausted_steps;
        c
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct PartialHeader {
    fingerprint: String,
}

/// Identifies the inputs a partial file was computed from.
fn fingerprint(cfg: &ExperimentConfig, policy: PolicyKind, load: f64) -> String {
    let mut echo = cfg.clone();
    echo.output = Default::default();
    serde_json::json!({ "config": echo, "policy": policy, "load": load }).to_string()
}

fn load_partial(path: &Path, fp: &str, n_cells: usize) -> Vec<Option<CellResult>> {
    let mut done = vec![None; n_cells];
    let Ok(file) = File::open(path) else {
        return done;
    };
    let mut lines = BufReader::new(file).lines();
    let header: Option<PartialHeader> = lines.next().and_then(|l| l.ok()).and_then(|l| serde_json::from_str(&l).ok());
    if header.as_ref().map(|h| h.fingerprint.as_str()) != Some(fp) {
        warn!("{} was written for a different configuration; starting over", path.display());
        return done;
    }
    let mut resumed = 0;
    // A torn final line from an interrupted write is ignored.
    for line in lines.map_while(Result::ok) {
        match serde_json::from_str::<StoredCell>(&line) {
            Ok(c) if c.index < n_cells => {
                let k = c.index;
                done[k] = Some(c.into_cell());
                resumed += 1;
            }
            _ => warn!("{}: ignoring unreadable line", path.display()),
        }
    }
    info!("{}: resuming with {resumed} of {n_cells} cells", path.display());
    done
}

#[derive(Debug, Clone, Serialize)]
struct GridSummary {
    parasitic_load: f64,
    file: String,
    cells: usize,
    stable: usize,
    unstable: usize,
    ambiguous: usize,
    skipped: usize,
    /// Mean average backlog over simulated cells, `null` if none.
    mean_avg_backlog: Option<f64>,
    max_excursion: Option<f64>,
    served_total: u64,
    failed_ops: u64,
    budget_exhausted_steps: u64,
}

fn summarize(load: f64, file: String, cells: &[CellResult]) -> GridSummary {
    let count = |s: Stability| cells.iter().filter(|c| c.stability == s).count();
    let simulated: Vec<&CellResult> = cells.iter().filter(|c| c.stability != Stability::Skipped).collect();
    let mean =
        (!simulated.is_empty()).then(|| simulated.iter().map(|c| c.avg_backlog).sum::<f64>() / simulated.len() as f64);
    GridSummary {
        parasitic_load: load,
        file,
        cells: cells.len(),
        stable: count(Stability::Stable),
        unstable: count(Stability::Unstable),
        ambiguous: count(Stability::Ambiguous),
        skipped: count(Stability::Skipped),
        mean_avg_backlog: mean,
        max_excursion: simulated.iter().map(|c| c.max_excursion).reduce(f64::max),
        served_total: cells.iter().map(|c| c.served_total).sum(),
        failed_ops: cells.iter().map(|c| c.failed_ops).sum(),
        budget_exhausted_steps: cells.iter().map(|c| c.budget_exhausted_steps).sum(),
    }
}

fn write_trace(path: &Path, cell: &CellResult) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (run, r) in cell.runs.iter().enumerate() {
        for step in &r.steps {
            let line = serde_json::json!({ "run": run, "step": step });
            writeln!(w, "{line}").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Runs every sweep of `cfg` and writes CSV grids, traces and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome, ExperimentError> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(dir) = &opts.out_dir {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let scenario = build_scenario(&cfg)?;
    let sim = cfg.sim_config();
    let mut csv_files = Vec::new();
    let mut tables: BTreeMap<String, Vec<GridSummary>> = BTreeMap::new();

    for &kind in &cfg.policies.kinds {
        let policy = BuiltinPolicy::new(kind, sim.solver);
        for &load in &cfg.pairs.parasitic_loads {
            let sweep = cfg.sweep_config(load);
            let stem = grid_file_stem(kind, load);
            let csv_path = out.join(format!("{stem}.csv"));
            let partial_path = out.join(format!("{stem}.partial.ndjson"));
            let fp = fingerprint(&cfg, kind, load);
            let done = load_partial(&partial_path, &fp, sweep.n_cells());

            let partial = {
                let fresh = done.iter().all(Option::is_none);
                let mut f = if fresh {
                    File::create(&partial_path)
                } else {
                    OpenOptions::new().append(true).open(&partial_path)
                }
                .map_err(io_err(&partial_path))?;
                if fresh {
                    let header =
                        serde_json::to_string(&PartialHeader { fingerprint: fp.clone() }).expect("serializable");
                    writeln!(f, "{header}").map_err(io_err(&partial_path))?;
                }
                Mutex::new(f)
            };
            let computed = AtomicUsize::new(0);
            let on_cell = |k: usize, cell: &CellResult| -> Result<(), HarnessError> {
                let fail = |e: std::io::Error| HarnessError::Aborted(format!("{}: {e}", partial_path.display()));
                if !cell.runs.is_empty() && cell.runs.iter().any(|r| !r.steps.is_empty()) {
                    let (i, j) = sweep.coords(k);
                    let path = out.join(format!("trace_{stem}_{i}_{j}.ndjson"));
                    write_trace(&path, cell).map_err(|e| HarnessError::Aborted(e.to_string()))?;
                }
                let line = serde_json::to_string(&StoredCell::new(k, cell)).expect("serializable");
                {
                    let mut f = partial.lock().expect("partial file lock");
                    writeln!(f, "{line}").map_err(fail)?;
                    f.flush().map_err(fail)?;
                }
                let n = computed.fetch_add(1, Ordering::SeqCst) + 1;
                if opts.stop_after_cells.is_some_and(|limit| n >= limit) {
                    return Err(HarnessError::Aborted(format!("stopped after {n} cells")));
                }
                Ok(())
            };
            info!("sweep {stem}: {} cells", sweep.n_cells());
            let cells = run_sweep(&scenario, &sweep, &sim, &policy, &done, &on_cell)?;
            write_grid_csv(&csv_path, &cells)?;
            drop(partial);
            fs::remove_file(&partial_path).map_err(io_err(&partial_path))?;
            let exhausted: u64 = cells.iter().map(|c| c.budget_exhausted_steps).sum();
            if exhausted > 0 {
                warn!("{stem}: solver budget exhausted on {exhausted} steps");
            }
            tables.entry(kind.to_string()).or_default().push(summarize(load, format!("{stem}.csv"), &cells));
            csv_files.push(csv_path);
        }
    }

    let summary_path = out.join("summary.json");
    let summary = serde_json::json!({
        "config": cfg,
        "effective": {
            "eta": cfg.eta(),
            "beta1_per_step": cfg.sweep_config(0.0).beta1,
            "beta2_per_step": cfg.sweep_config(0.0).beta2,
            "parasitic_loads_per_step": cfg.pairs.parasitic_loads.iter().map(|&l| cfg.per_step(l)).collect::<Vec<_>>(),
            "nodes": scenario.graph.node_count(),
            "links": scenario.graph.edge_count(),
        },
        "seeds": { "master": sim.seed, "runs": (0..sim.n_runs).collect::<Vec<_>>() },
        "wall_time_s": started.elapsed().as_secs_f64(),
        "policies": tables,
    });
    let text = serde_json::to_string_pretty(&summary).expect("serializable");
    fs::write(&summary_path, text + "\n").map_err(io_err(&summary_path))?;
    Ok(ExperimentOutcome { csv_files, summary: summary_path })
}
