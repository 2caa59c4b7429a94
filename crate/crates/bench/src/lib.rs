//! Shared fixtures for the benchmarks.

use swapq_core::harness::{Scenario, SweepConfig};
use swapq_core::topology::{generate_topology, grid_node};
use swapq_core::{NetworkModel, NodePair, TopologyKind};

/// `rows x cols` grid with corner-to-corner fixed pairs and `parasitic`
/// background pairs, all at the given rates.
pub fn grid_model(rows: usize, cols: usize, parasitic: usize, beta: f64, load: f64) -> NetworkModel {
    let graph = generate_topology(&TopologyKind::Grid { rows, cols }, 1.0, 0).expect("valid grid");
    let corner = |r, c| grid_node(rows, cols, r, c);
    let fixed = vec![
        NodePair::new(corner(0, 0), corner(rows - 1, cols - 1)).expect("distinct corners"),
        NodePair::new(corner(0, cols - 1), corner(rows - 1, 0)).expect("distinct corners"),
    ];
    let scenario = Scenario::new(graph, fixed, 0.9).expect("valid scenario");
    let sweep = SweepConfig {
        beta1: vec![beta],
        beta2: vec![beta],
        parasitic_count: parasitic,
        parasitic_load: load,
        route_removal_prob: 0.5,
        pareto_skip: false,
    };
    let mut model = scenario.build_run_model(&sweep, 1, 0).expect("model");
    let rates: Vec<f64> = (0..model.pairs().len()).map(|i| if i < 2 { beta } else { load }).collect();
    model.set_demand_rates(&rates);
    model
}
