//! Network graphs, service routes and the linear queue model built from them.

mod generate;
mod graph;
mod matrix;
mod model;
mod routing;

use thiserror::Error;

pub use generate::{
    generate_topology, grid_node, max_degree, parse_edge_list, write_edge_list, TopologyKind, MAX_CONNECT_ATTEMPTS,
};
pub use graph::{NetworkGraph, NodeId, NodePair, PairKind, Route, UserPair};
pub use matrix::IntMatrix;
pub use model::{
    assign_ranks, build_matrices, enumerate_transitions, fixed_pair, queue_spans, Matrices, NetworkModel, Operation,
    QueueIndex, Ranks, Transition, TransitionKey,
};
pub use routing::compute_routes;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid topology parameters: {0}")]
    InvalidParams(String),
    #[error("could not generate a connected {kind} graph after {attempts} attempts")]
    GenerationFailed { kind: &'static str, attempts: u64 },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0}")]
    DuplicateEdge(NodePair),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("routing failed: {0}")]
    Routing(String),
    #[error("model construction failed: {0}")]
    ModelConstruction(String),
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
}
