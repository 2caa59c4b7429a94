//! Synthetic physical topologies.
//!
//! Random kinds are resampled with a fresh sub-seed until the graph is
//! connected, up to [`MAX_CONNECT_ATTEMPTS`] tries.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkGraph, NodeId, TopologyError};
use crate::stochastic::{seeded_rng, Purpose, StreamKey};

pub const MAX_CONNECT_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyKind {
    Grid { rows: usize, cols: usize },
    HoledGrid { rows: usize, cols: usize, p: f64 },
    ErdosRenyi { n: usize, p: f64 },
    WattsStrogatz { n: usize, k: usize, p: f64 },
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Grid { .. } => "grid",
            TopologyKind::HoledGrid { .. } => "holed_grid",
            TopologyKind::ErdosRenyi { .. } => "erdos_renyi",
            TopologyKind::WattsStrogatz { .. } => "watts_strogatz",
        }
    }

    fn validate(&self) -> Result<(), TopologyError> {
        let bad = |msg: String| Err(TopologyError::InvalidParams(msg));
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        match *self {
            TopologyKind::Grid { rows, cols } | TopologyKind::HoledGrid { rows, cols, .. }
                if rows == 0 || cols == 0 || rows * cols < 2 =>
            {
                bad(format!("grid needs at least two nodes, got {rows}x{cols}"))
            }
            TopologyKind::HoledGrid { p, .. } if !prob_ok(p) || p >= 1.0 => {
                bad(format!("node removal probability must be in [0, 1), got {p}"))
            }
            TopologyKind::ErdosRenyi { n, p } if n < 2 || !prob_ok(p) => {
                bad(format!("erdos_renyi needs n >= 2 and p in [0, 1], got n={n}, p={p}"))
            }
            TopologyKind::WattsStrogatz { n, k, p } if k < 2 || k % 2 != 0 || k >= n || !prob_ok(p) => {
                bad(format!("watts_strogatz needs an even k with 2 <= k < n and p in [0, 1], got n={n}, k={k}, p={p}"))
            }
            _ => Ok(()),
        }
    }
}

/// Generates a connected topology whose links all carry rate `alpha`.
pub fn generate_topology(kind: &TopologyKind, alpha: f64, seed: u64) -> Result<NetworkGraph, TopologyError> {
    kind.validate()?;
    if let TopologyKind::Grid { rows, cols } = *kind {
        return lattice(rows, cols, alpha);
    }
    for attempt in 0..MAX_CONNECT_ATTEMPTS {
        let mut rng = seeded_rng(seed, StreamKey::new(attempt, 0, 0, Purpose::Topology));
        let g = match *kind {
            TopologyKind::HoledGrid { rows, cols, p } => {
                let mut g = lattice(rows, cols, alpha)?;
                let all: Vec<NodeId> = g.nodes().cloned().collect();
                for n in all {
                    if rng.random_bool(p) {
                        g.remove_node(&n);
                    }
                }
                g
            }
            TopologyKind::ErdosRenyi { n, p } => {
                let names = node_names(n);
                let mut g = NetworkGraph::new();
                for name in &names {
                    g.add_node(name.clone());
                }
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random_bool(p) {
                            g.add_edge(names[i].clone(), names[j].clone(), alpha)?;
                        }
                    }
                }
                g
            }
            TopologyKind::WattsStrogatz { n, k, p } => watts_strogatz(n, k, p, alpha, &mut rng)?,
            TopologyKind::Grid { .. } => unreachable!(),
        };
        if g.node_count() >= 2 && g.is_connected() {
            return Ok(g);
        }
        log::debug!("{} attempt {attempt} disconnected, resampling", kind.name());
    }
    Err(TopologyError::GenerationFailed { kind: kind.name(), attempts: MAX_CONNECT_ATTEMPTS })
}

fn pad_width(count: usize) -> usize {
    count.saturating_sub(1).to_string().len()
}

fn node_names(n: usize) -> Vec<NodeId> {
    let w = pad_width(n);
    (0..n).map(|i| NodeId(format!("n{i:0w$}"))).collect()
}

/// Name of the lattice node at (`row`, `col`) in a grid of the given shape.
pub fn grid_node(rows: usize, cols: usize, row: usize, col: usize) -> NodeId {
    let (wr, wc) = (pad_width(rows), pad_width(cols));
    NodeId(format!("r{row:0wr$}c{col:0wc$}"))
}

fn lattice(rows: usize, cols: usize, alpha: f64) -> Result<NetworkGraph, TopologyError> {
    let mut g = NetworkGraph::new();
    for r in 0..rows {
        for c in 0..cols {
            let here = grid_node(rows, cols, r, c);
            g.add_node(here.clone());
            if c + 1 < cols {
                g.add_edge(here.clone(), grid_node(rows, cols, r, c + 1), alpha)?;
            }
            if r + 1 < rows {
                g.add_edge(here, grid_node(rows, cols, r + 1, c), alpha)?;
            }
        }
    }
    Ok(g)
}

/// Ring lattice with `k/2` neighbours per side, each lattice edge rewired
/// to a uniformly chosen new endpoint with probability `p`.
fn watts_strogatz(n: usize, k: usize, p: f64, alpha: f64, rng: &mut impl Rng) -> Result<NetworkGraph, TopologyError> {
    let names = node_names(n);
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if !adj[u].contains(&v) || !rng.random_bool(p) {
                continue;
            }
            let candidates: Vec<usize> = (0..n).filter(|&w| w != u && !adj[u].contains(&w)).collect();
            if let Some(&w) = candidates.choose(rng) {
                adj[u].remove(&v);
                adj[v].remove(&u);
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
    }
    let mut g = NetworkGraph::new();
    for name in &names {
        g.add_node(name.clone());
    }
    for (u, set) in adj.iter().enumerate() {
        for &v in set.iter().filter(|&&v| v > u) {
            g.add_edge(names[u].clone(), names[v].clone(), alpha)?;
        }
    }
    Ok(g)
}

/// Parses the `node_a node_b alpha` edge-list format. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_edge_list(text: &str) -> Result<NetworkGraph, TopologyError> {
    let mut g = NetworkGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| TopologyError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b, alpha] = fields[..] else {
            return Err(parse_err(format!("expected `node_a node_b alpha`, got {} fields", fields.len())));
        };
        let alpha: f64 = alpha.parse().map_err(|_| parse_err(format!("invalid rate `{alpha}`")))?;
        g.add_edge(a.into(), b.into(), alpha).map_err(|e| parse_err(e.to_string()))?;
    }
    if g.node_count() < 2 || !g.is_connected() {
        return Err(TopologyError::InvalidParams("edge list does not describe a connected graph".into()));
    }
    Ok(g)
}

/// Writes a graph in the edge-list format accepted by [`parse_edge_list`].
pub fn write_edge_list(g: &NetworkGraph) -> String {
    g.edges().map(|(p, a)| format!("{} {} {a}\n", p.lo(), p.hi())).collect()
}

/// Degree check helper used by tests and diagnostics.
pub fn max_degree(g: &NetworkGraph) -> usize {
    g.nodes().map(|n| g.neighbors(n).count()).max().unwrap_or(0)
}
