use std::collections::BTreeSet;

use rand::Rng;

use super::{NetworkGraph, NodeId, NodePair, Route, TopologyError};

/// Computes up to two service routes between `a` and `b`.
///
/// The first route is a shortest path. The second is the shortest path after
/// deleting each link of the first independently with probability
/// `removal_prob`; it is dropped when it duplicates the first or when the
/// perturbed graph separates the endpoints.
pub fn compute_routes(
    graph: &NetworkGraph,
    a: &NodeId,
    b: &NodeId,
    removal_prob: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Route>, TopologyError> {
    if a == b {
        return Err(TopologyError::Routing(format!("degenerate endpoints ({a}, {a})")));
    }
    if !(0.0..=1.0).contains(&removal_prob) {
        return Err(TopologyError::InvalidParams(format!(
            "route removal probability must be in [0, 1], got {removal_prob}"
        )));
    }
    for n in [a, b] {
        if !graph.contains_node(n) {
            return Err(TopologyError::UnknownNode(n.clone()));
        }
    }
    let first = graph
        .shortest_path(a, b, &BTreeSet::new())
        .ok_or_else(|| TopologyError::Routing(format!("{a} and {b} are disconnected")))?;
    let first = Route::in_graph(first, graph)?;

    let removed: BTreeSet<NodePair> = first.links().filter(|_| rng.random_bool(removal_prob)).collect();
    let mut routes = vec![first];
    if removed.is_empty() {
        return Ok(routes);
    }
    if let Some(second) = graph.shortest_path(a, b, &removed) {
        let second = Route::in_graph(second, graph)?;
        if second != routes[0] {
            routes.push(second);
        }
    }
    Ok(routes)
}
