use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TopologyError;

/// Opaque node identifier. Ordering is plain string ordering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

/// Unordered pair of distinct nodes, stored with `lo < hi`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodePair {
    lo: NodeId,
    hi: NodeId,
}

impl NodePair {
    /// Returns `None` for a degenerate pair (`a == b`).
    pub fn new(a: NodeId, b: NodeId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(NodePair { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(NodePair { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn of(a: &str, b: &str) -> Option<Self> {
        Self::new(NodeId::from(a), NodeId::from(b))
    }

    pub fn lo(&self) -> &NodeId {
        &self.lo
    }

    pub fn hi(&self) -> &NodeId {
        &self.hi
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        &self.lo == n || &self.hi == n
    }
}

impl fmt::Display for NodePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Undirected physical topology with a per-link ebit generation rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct NetworkGraph {
    nodes: BTreeSet<NodeId>,
    edges: BTreeMap<NodePair, f64>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<NodeId>,
    edges: Vec<(NodeId, NodeId, f64)>,
}

impl From<NetworkGraph> for GraphRepr {
    fn from(g: NetworkGraph) -> Self {
        GraphRepr {
            nodes: g.nodes.into_iter().collect(),
            edges: g.edges.into_iter().map(|(p, a)| (p.lo, p.hi, a)).collect(),
        }
    }
}

impl From<GraphRepr> for NetworkGraph {
    fn from(r: GraphRepr) -> Self {
        let mut g = NetworkGraph::new();
        for n in r.nodes {
            g.add_node(n);
        }
        for (a, b, alpha) in r.edges {
            if let Some(p) = NodePair::new(a, b) {
                g.nodes.insert(p.lo.clone());
                g.nodes.insert(p.hi.clone());
                g.edges.insert(p, alpha);
            }
        }
        g.reindex();
        g
    }
}

impl NetworkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.adjacency.entry(n.clone()).or_default();
        self.nodes.insert(n);
    }

    /// Adds a physical link with generation rate `alpha` (ebits per step).
    pub fn add_edge(&mut self, a: NodeId, b: NodeId, alpha: f64) -> Result<(), TopologyError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(TopologyError::InvalidParams(format!(
                "edge {a}-{b}: rate must be a finite nonnegative number, got {alpha}"
            )));
        }
        let pair = NodePair::new(a.clone(), b.clone()).ok_or(TopologyError::SelfLoop(a.clone()))?;
        if self.edges.contains_key(&pair) {
            return Err(TopologyError::DuplicateEdge(pair));
        }
        self.add_node(a.clone());
        self.add_node(b.clone());
        self.adjacency.get_mut(&a).unwrap().insert(b.clone());
        self.adjacency.get_mut(&b).unwrap().insert(a);
        self.edges.insert(pair, alpha);
        Ok(())
    }

    pub fn remove_node(&mut self, n: &NodeId) {
        if let Some(neigh) = self.adjacency.remove(n) {
            for m in neigh {
                if let Some(set) = self.adjacency.get_mut(&m) {
                    set.remove(n);
                }
                if let Some(p) = NodePair::new(n.clone(), m) {
                    self.edges.remove(&p);
                }
            }
        }
        self.nodes.remove(n);
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, n: &NodeId) -> bool {
        self.nodes.contains(n)
    }

    /// Physical links with their generation rates, in pair order.
    pub fn edges(&self) -> impl Iterator<Item = (&NodePair, f64)> {
        self.edges.iter().map(|(p, a)| (p, *a))
    }

    pub fn has_edge(&self, pair: &NodePair) -> bool {
        self.edges.contains_key(pair)
    }

    pub fn rate(&self, pair: &NodePair) -> Option<f64> {
        self.edges.get(pair).copied()
    }

    pub fn set_uniform_rate(&mut self, alpha: f64) {
        for rate in self.edges.values_mut() {
            *rate = alpha;
        }
    }

    pub fn neighbors<'a>(&'a self, n: &NodeId) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.adjacency.get(n).into_iter().flat_map(|s| s.iter())
    }

    /// Rebuilds the adjacency cache (it is not serialized).
    pub fn reindex(&mut self) {
        self.adjacency.clear();
        for n in &self.nodes {
            self.adjacency.entry(n.clone()).or_default();
        }
        for p in self.edges.keys() {
            self.adjacency.get_mut(p.lo()).unwrap().insert(p.hi().clone());
            self.adjacency.get_mut(p.hi()).unwrap().insert(p.lo().clone());
        }
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.nodes.iter().next() else {
            return false;
        };
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(n) = queue.pop_front() {
            for m in self.neighbors(n) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Breadth-first shortest path, skipping the links in `excluded`.
    ///
    /// Neighbours are expanded in node order, so the result is deterministic.
    pub fn shortest_path(&self, from: &NodeId, to: &NodeId, excluded: &BTreeSet<NodePair>) -> Option<Vec<NodeId>> {
        if !self.contains_node(from) || !self.contains_node(to) {
            return None;
        }
        let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        parent.insert(from, from);
        while let Some(n) = queue.pop_front() {
            if n == to {
                break;
            }
            for m in self.neighbors(n) {
                if parent.contains_key(m) {
                    continue;
                }
                let link = NodePair::new(n.clone(), m.clone()).unwrap();
                if excluded.contains(&link) {
                    continue;
                }
                parent.insert(m, n);
                queue.push_back(m);
            }
        }
        parent.get(to)?;
        let mut path = vec![to.clone()];
        let mut cur = to;
        while cur != from {
            cur = parent[cur];
            path.push(cur.clone());
        }
        path.reverse();
        Some(path)
    }
}

/// Simple path through the physical graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Route(Vec<NodeId>);

impl Route {
    pub fn new(nodes: Vec<NodeId>) -> Result<Self, TopologyError> {
        if nodes.len() < 2 {
            return Err(TopologyError::InvalidRoute("a route needs at least two nodes".into()));
        }
        let distinct: BTreeSet<_> = nodes.iter().collect();
        if distinct.len() != nodes.len() {
            return Err(TopologyError::InvalidRoute(format!("route {} repeats a node", Self::render(&nodes))));
        }
        Ok(Route(nodes))
    }

    /// Builds a route and checks that every hop is a physical link of `graph`.
    pub fn in_graph(nodes: Vec<NodeId>, graph: &NetworkGraph) -> Result<Self, TopologyError> {
        let route = Self::new(nodes)?;
        for hop in route.0.windows(2) {
            let link = NodePair::new(hop[0].clone(), hop[1].clone()).unwrap();
            if !graph.has_edge(&link) {
                return Err(TopologyError::InvalidRoute(format!(
                    "route {route} uses {link}, which is not a physical link"
                )));
            }
        }
        Ok(route)
    }

    pub fn from_names(names: &[&str]) -> Result<Self, TopologyError> {
        Self::new(names.iter().map(|n| NodeId::from(*n)).collect())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn hops(&self) -> usize {
        self.0.len() - 1
    }

    pub fn endpoints(&self) -> NodePair {
        NodePair::new(self.0[0].clone(), self.0[self.0.len() - 1].clone()).unwrap()
    }

    pub fn links(&self) -> impl Iterator<Item = NodePair> + '_ {
        self.0.windows(2).map(|w| NodePair::new(w[0].clone(), w[1].clone()).unwrap())
    }

    fn render(nodes: &[NodeId]) -> String {
        nodes.iter().map(|n| n.as_str()).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&Self::render(&self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Fixed,
    Parasitic,
}

/// A pair of users requesting end-to-end ebits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPair {
    pub endpoints: NodePair,
    /// Demand arrival rate, demands per time step.
    pub beta: f64,
    pub routes: Vec<Route>,
    pub kind: PairKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(names: &[&str]) -> NetworkGraph {
        let mut g = NetworkGraph::new();
        for w in names.windows(2) {
            g.add_edge(w[0].into(), w[1].into(), 1.0).unwrap();
        }
        g
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        let mut g = chain(&["A", "B"]);
        assert!(matches!(g.add_edge("A".into(), "A".into(), 1.0), Err(TopologyError::SelfLoop(_))));
        assert!(matches!(g.add_edge("B".into(), "A".into(), 1.0), Err(TopologyError::DuplicateEdge(_))));
    }

    #[test]
    fn shortest_path_on_chain() {
        let g = chain(&["A", "B", "C", "D"]);
        let p = g.shortest_path(&"A".into(), &"D".into(), &BTreeSet::new()).unwrap();
        assert_eq!(p, vec!["A".into(), "B".into(), "C".into(), "D".into()] as Vec<NodeId>);
        let cut = BTreeSet::from([NodePair::of("B", "C").unwrap()]);
        assert!(g.shortest_path(&"A".into(), &"D".into(), &cut).is_none());
    }

    #[test]
    fn remove_node_keeps_adjacency_consistent() {
        let mut g = chain(&["A", "B", "C"]);
        g.remove_node(&"B".into());
        assert_eq!(g.edge_count(), 0);
        assert!(!g.is_connected());
        assert_eq!(g.neighbors(&"A".into()).count(), 0);
    }

    #[test]
    fn route_validation() {
        assert!(Route::from_names(&["A"]).is_err());
        assert!(Route::from_names(&["A", "B", "A"]).is_err());
        let g = chain(&["A", "B", "C"]);
        let bad = vec![NodeId::from("A"), NodeId::from("C")];
        assert!(Route::in_graph(bad, &g).is_err());
    }
}
