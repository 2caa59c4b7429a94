use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use petgraph::Direction;
use serde::Serialize;

use super::{IntMatrix, NetworkGraph, NodeId, NodePair, PairKind, Route, TopologyError, UserPair};

/// Swap at `swap` consuming `(left, swap)` and `(swap, right)` to produce
/// `(left, right)`. Stored with `left < right`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TransitionKey {
    pub left: NodeId,
    pub swap: NodeId,
    pub right: NodeId,
}

impl TransitionKey {
    pub fn new(i: NodeId, j: NodeId, k: NodeId) -> Self {
        if i <= k {
            TransitionKey { left: i, swap: j, right: k }
        } else {
            TransitionKey { left: k, swap: j, right: i }
        }
    }

    pub fn of(i: &str, j: &str, k: &str) -> Self {
        Self::new(i.into(), j.into(), k.into())
    }

    pub fn parents(&self) -> [NodePair; 2] {
        [
            NodePair::new(self.left.clone(), self.swap.clone()).expect("distinct route nodes"),
            NodePair::new(self.swap.clone(), self.right.clone()).expect("distinct route nodes"),
        ]
    }

    pub fn child(&self) -> NodePair {
        NodePair::new(self.left.clone(), self.right.clone()).expect("distinct route nodes")
    }
}

impl fmt::Display for TransitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]{}", self.left, self.swap, self.right)
    }
}

/// Every ordered triple along every route, deduplicated and sorted.
pub fn enumerate_transitions(routes: &[Route]) -> Vec<TransitionKey> {
    let mut out = BTreeSet::new();
    for route in routes {
        let v = route.nodes();
        for a in 0..v.len() {
            for b in a + 1..v.len() {
                for c in b + 1..v.len() {
                    out.insert(TransitionKey::new(v[a].clone(), v[b].clone(), v[c].clone()));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Number of physical hops each queue covers: 1 for physical links, else the
/// minimum distance between its endpoints along any route containing both.
pub fn queue_spans(graph: &NetworkGraph, routes: &[Route]) -> BTreeMap<NodePair, u32> {
    let mut spans: BTreeMap<NodePair, u32> = graph.edges().map(|(p, _)| (p.clone(), 1)).collect();
    for route in routes {
        let v = route.nodes();
        for x in 0..v.len() {
            for y in x + 1..v.len() {
                let pair = NodePair::new(v[x].clone(), v[y].clone()).expect("simple route");
                let hops = (y - x) as u32;
                spans.entry(pair).and_modify(|s| *s = (*s).min(hops)).or_insert(hops);
            }
        }
    }
    spans
}

/// Dense indexing of the ebit/demand queues.
#[derive(Debug, Clone, Serialize)]
pub struct QueueIndex {
    pairs: Vec<NodePair>,
    physical: Vec<bool>,
    #[serde(skip)]
    lookup: HashMap<NodePair, usize>,
}

impl QueueIndex {
    /// Indexes `pairs` in the given order.
    pub fn from_pairs(pairs: Vec<NodePair>, graph: &NetworkGraph) -> Result<Self, TopologyError> {
        let mut lookup = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if lookup.insert(p.clone(), i).is_some() {
                return Err(TopologyError::ModelConstruction(format!("queue {p} indexed twice")));
            }
        }
        let physical = pairs.iter().map(|p| graph.has_edge(p)).collect();
        Ok(QueueIndex { pairs, physical, lookup })
    }

    /// Physical links plus every pair co-occurring on a route, ordered by
    /// (span, pair). The span-major order makes the linear four-node chain
    /// come out as AB, BC, CD, AC, BD, AD.
    pub fn build(graph: &NetworkGraph, routes: &[Route]) -> Self {
        let spans = queue_spans(graph, routes);
        let mut pairs: Vec<(u32, NodePair)> = spans.into_iter().map(|(p, s)| (s, p)).collect();
        pairs.sort();
        Self::from_pairs(pairs.into_iter().map(|(_, p)| p).collect(), graph).expect("pairs are unique")
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn index_of(&self, pair: &NodePair) -> Option<usize> {
        self.lookup.get(pair).copied()
    }

    pub fn pair(&self, i: usize) -> &NodePair {
        &self.pairs[i]
    }

    pub fn pairs(&self) -> &[NodePair] {
        &self.pairs
    }

    pub fn is_physical(&self, i: usize) -> bool {
        self.physical[i]
    }

    /// Queues with `node` as an endpoint.
    pub fn incident(&self, node: &NodeId) -> Vec<usize> {
        (0..self.pairs.len()).filter(|&i| self.pairs[i].contains(node)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrices {
    pub m: IntMatrix,
    pub m_tilde: IntMatrix,
    pub n_tilde: IntMatrix,
}

/// Builds `M` (queues × transitions), `M̃ = [M | -I]` and `Ñ = [0 | -I]`.
pub fn build_matrices(queues: &QueueIndex, transitions: &[TransitionKey]) -> Result<Matrices, TopologyError> {
    let nq = queues.len();
    let mut m = IntMatrix::zeros(nq, transitions.len());
    for (col, t) in transitions.iter().enumerate() {
        let lookup = |p: &NodePair| {
            queues.index_of(p).ok_or_else(|| {
                TopologyError::ModelConstruction(format!("transition {t} references unindexed queue {p}"))
            })
        };
        for p in t.parents() {
            m.set(lookup(&p)?, col, -1);
        }
        m.set(lookup(&t.child())?, col, 1);
    }
    let m_tilde = m.hcat(&IntMatrix::neg_identity(nq));
    let n_tilde = IntMatrix::zeros(nq, transitions.len()).hcat(&IntMatrix::neg_identity(nq));
    Ok(Matrices { m, m_tilde, n_tilde })
}

/// Execution ranks: operations of lower rank run first within a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ranks {
    pub transitions: Vec<u32>,
    pub consumptions: Vec<u32>,
}

/// Production depth of every queue: 1 for queues no swap produces, else one
/// more than the deepest parent of any swap producing it. On a single route
/// this is the span. Queues that produce each other through different routes
/// share a level.
fn production_levels(n_queues: usize, transitions: &[(usize, [usize; 2])]) -> Vec<u32> {
    let mut g = DiGraph::<(), ()>::with_capacity(n_queues, 2 * transitions.len());
    let nodes: Vec<_> = (0..n_queues).map(|_| g.add_node(())).collect();
    for &(child, parents) in transitions {
        for p in parents {
            g.add_edge(nodes[p], nodes[child], ());
        }
    }
    // Tarjan lists components sinks first.
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0; n_queues];
    for (c, members) in sccs.iter().enumerate() {
        for n in members {
            comp[n.index()] = c;
        }
    }
    let mut level = vec![1u32; sccs.len()];
    for c in (0..sccs.len()).rev() {
        for n in &sccs[c] {
            for pred in g.neighbors_directed(*n, Direction::Incoming) {
                let pc = comp[pred.index()];
                if pc != c {
                    level[c] = level[c].max(level[pc] + 1);
                }
            }
        }
    }
    (0..n_queues).map(|q| level[comp[q]]).collect()
}

/// Consuming a queue of level `s` gets rank `2(s-1)`; a swap producing a
/// child of level `s` gets rank `2s-3`. The level is the production depth,
/// which equals the span on single-route networks, so producers of a queue
/// run before its consumption, which runs before the swaps it feeds.
pub fn assign_ranks(
    queues: &QueueIndex,
    transitions: &[TransitionKey],
    graph: &NetworkGraph,
    routes: &[Route],
) -> Result<Ranks, TopologyError> {
    let spans = queue_spans(graph, routes);
    let index = |p: &NodePair| {
        queues.index_of(p).filter(|_| spans.contains_key(p)).ok_or_else(|| {
            TopologyError::ModelConstruction(format!("queue {p} has no span: not physical and not on any route"))
        })
    };
    for p in queues.pairs() {
        index(p)?;
    }
    let edges = transitions
        .iter()
        .map(|t| {
            let [a, b] = t.parents();
            Ok((index(&t.child())?, [index(&a)?, index(&b)?]))
        })
        .collect::<Result<Vec<_>, TopologyError>>()?;
    let levels = production_levels(queues.len(), &edges);
    let consumptions = levels.iter().map(|&s| 2 * (s - 1)).collect();
    let transitions = edges.iter().map(|&(child, _)| (2 * levels[child]).saturating_sub(3).max(1)).collect();
    Ok(Ranks { transitions, consumptions })
}

#[derive(Debug, Clone, Serialize)]
pub struct Transition {
    pub key: TransitionKey,
    pub parents: [usize; 2],
    pub child: usize,
    pub rank: u32,
}

/// Index of one column of `M̃`: either a swap or a consumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Operation {
    Swap(usize),
    Consume(usize),
}

/// Immutable queue model of a routed network.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkModel {
    graph: NetworkGraph,
    pairs: Vec<UserPair>,
    queues: QueueIndex,
    transitions: Vec<Transition>,
    m: IntMatrix,
    consumption_ranks: Vec<u32>,
    eta: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl NetworkModel {
    pub fn build(graph: NetworkGraph, pairs: Vec<UserPair>, eta: f64) -> Result<Self, TopologyError> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(TopologyError::InvalidParams(format!("eta must be in (0, 1], got {eta}")));
        }
        for pair in &pairs {
            if pair.routes.is_empty() {
                return Err(TopologyError::ModelConstruction(format!("pair {} has no route", pair.endpoints)));
            }
            if !(pair.beta >= 0.0 && pair.beta.is_finite()) {
                return Err(TopologyError::InvalidParams(format!(
                    "pair {}: demand rate must be finite and nonnegative, got {}",
                    pair.endpoints, pair.beta
                )));
            }
            for route in &pair.routes {
                Route::in_graph(route.nodes().to_vec(), &graph)?;
                if route.endpoints() != pair.endpoints {
                    return Err(TopologyError::ModelConstruction(format!(
                        "route {route} does not connect {}",
                        pair.endpoints
                    )));
                }
            }
        }
        let routes: Vec<Route> = pairs.iter().flat_map(|p| p.routes.iter().cloned()).collect();
        let queues = QueueIndex::build(&graph, &routes);

        let mut keys = enumerate_transitions(&routes);
        // Column order: by child queue index, then swap node.
        keys.sort_by_cached_key(|t| (queues.index_of(&t.child()), t.swap.clone(), t.left.clone()));
        let matrices = build_matrices(&queues, &keys)?;
        let ranks = assign_ranks(&queues, &keys, &graph, &routes)?;

        let transitions = keys
            .into_iter()
            .zip(&ranks.transitions)
            .map(|(key, &rank)| {
                let [p0, p1] = key.parents();
                Transition {
                    parents: [queues.index_of(&p0).unwrap(), queues.index_of(&p1).unwrap()],
                    child: queues.index_of(&key.child()).unwrap(),
                    key,
                    rank,
                }
            })
            .collect();

        let alpha = queues.pairs().iter().map(|p| graph.rate(p).unwrap_or(0.0)).collect();
        let mut model = NetworkModel {
            beta: vec![0.0; queues.len()],
            graph,
            pairs,
            queues,
            transitions,
            m: matrices.m,
            consumption_ranks: ranks.consumptions,
            eta,
            alpha,
        };
        model.refresh_beta();
        Ok(model)
    }

    fn refresh_beta(&mut self) {
        self.beta.iter_mut().for_each(|b| *b = 0.0);
        for pair in &self.pairs {
            let e = self.queues.index_of(&pair.endpoints).expect("pair endpoints are indexed");
            self.beta[e] += pair.beta;
        }
    }

    /// Replaces the demand rates of all user pairs, in pair order.
    pub fn set_demand_rates(&mut self, betas: &[f64]) {
        assert_eq!(betas.len(), self.pairs.len(), "one rate per user pair");
        for (pair, &b) in self.pairs.iter_mut().zip(betas) {
            pair.beta = b;
        }
        self.refresh_beta();
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn pairs(&self) -> &[UserPair] {
        &self.pairs
    }

    pub fn fixed_pairs(&self) -> impl Iterator<Item = &UserPair> {
        self.pairs.iter().filter(|p| p.kind == PairKind::Fixed)
    }

    pub fn queues(&self) -> &QueueIndex {
        &self.queues
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn n_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.len()
    }

    /// Length of a schedule vector.
    pub fn n_ops(&self) -> usize {
        self.n_transitions() + self.n_queues()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Per-queue ebit generation rate (zero on virtual queues).
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Per-queue demand rate (zero off user-pair queues).
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn is_user_queue(&self, e: usize) -> bool {
        let pair = self.queues.pair(e);
        self.pairs.iter().any(|p| &p.endpoints == pair)
    }

    pub fn m(&self) -> &IntMatrix {
        &self.m
    }

    pub fn m_tilde(&self) -> IntMatrix {
        self.m.hcat(&IntMatrix::neg_identity(self.n_queues()))
    }

    pub fn n_tilde(&self) -> IntMatrix {
        IntMatrix::zeros(self.n_queues(), self.n_transitions()).hcat(&IntMatrix::neg_identity(self.n_queues()))
    }

    pub fn operation(&self, col: usize) -> Operation {
        if col < self.n_transitions() {
            Operation::Swap(col)
        } else {
            Operation::Consume(col - self.n_transitions())
        }
    }

    pub fn rank(&self, op: Operation) -> u32 {
        match op {
            Operation::Swap(t) => self.transitions[t].rank,
            Operation::Consume(e) => self.consumption_ranks[e],
        }
    }

    pub fn consumption_ranks(&self) -> &[u32] {
        &self.consumption_ranks
    }

    /// Node that executes an operation: the swap node for swaps, the
    /// smaller endpoint for consumptions.
    pub fn owner(&self, op: Operation) -> &NodeId {
        match op {
            Operation::Swap(t) => &self.transitions[t].key.swap,
            Operation::Consume(e) => self.queues.pair(e).lo(),
        }
    }

    pub fn transition_index(&self, key: &TransitionKey) -> Option<usize> {
        self.transitions.iter().position(|t| &t.key == key)
    }

    pub fn queue_index(&self, a: &str, b: &str) -> Option<usize> {
        self.queues.index_of(&NodePair::of(a, b)?)
    }

    pub fn describe(&self, col: usize) -> String {
        match self.operation(col) {
            Operation::Swap(t) => self.transitions[t].key.to_string(),
            Operation::Consume(e) => format!("consume {}", self.queues.pair(e)),
        }
    }
}

/// Fixed pair with the given routes; convenience for tests and examples.
pub fn fixed_pair(routes: Vec<Route>, beta: f64) -> UserPair {
    UserPair { endpoints: routes[0].endpoints(), beta, routes, kind: PairKind::Fixed }
}
