//! Insertion-only sequence of attributed graph windows.
//!
//! Time steps are 1-based: `window(1)` is the earliest graphlet and
//! `window(len())` the latest. Node indices are dense and assigned in order
//! of first appearance, so the node set of every window is a prefix
//! `0..node_count` of the registry.

mod io;
mod pairs;
mod sampling;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{node_order, read_edge_list, read_feature_matrix, write_feature_matrix, EdgeRecord};
pub use pairs::{build_training_pairs, sample_non_edges, TrainingPairs};
pub use sampling::sample_neighbors;
pub(crate) use sampling::sample_from;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node index {0} is not present in this window")]
    NodeOutOfRange(usize),
    #[error("node `{0}` already exists")]
    DuplicateNode(String),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("window {window} would remove edge ({a}, {b}); the graph is insertion-only")]
    Removal { window: usize, a: String, b: String },
    #[error("window {window} would remove node `{node}`; the graph is insertion-only")]
    NodeRemoval { window: usize, node: String },
    #[error("feature matrix has {actual} values, expected {rows} x {dim}")]
    FeatureShape {
        rows: usize,
        dim: usize,
        actual: usize,
    },
    #[error("non-finite feature value for node {node}")]
    NonFiniteFeature { node: usize },
    #[error("time step {t} out of range 1..={len}")]
    TimeOutOfRange { t: usize, len: usize },
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Term category carried through from the lexicon. Stored, not modelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Gene,
    Chemical,
    Disease,
    #[default]
    Other,
}

impl FromStr for Category {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gene" | "genes" => Ok(Self::Gene),
            "chemical" | "chemicals" => Ok(Self::Chemical),
            "disease" | "diseases" => Ok(Self::Disease),
            "other" | "" => Ok(Self::Other),
            other => Err(GraphError::Format(format!("unknown category `{other}`"))),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Gene => "gene",
            Self::Chemical => "chemical",
            Self::Disease => "disease",
            Self::Other => "other",
        };
        f.write_str(s)
    }
}

/// Canonical undirected pair with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    lo: usize,
    hi: usize,
}

impl Pair {
    /// `None` for self-pairs.
    pub fn new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Self { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn lo(self) -> usize {
        self.lo
    }

    pub fn hi(self) -> usize {
        self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Unlabeled,
}

/// A node pair at time step `t` with its observation flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub pair: Pair,
    pub t: usize,
    /// `true` iff the pair is linked in the labelling window.
    pub observed: bool,
}

/// External term id to dense index mapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeRegistry {
    ids: Vec<String>,
    categories: Vec<Category>,
    index: HashMap<String, usize>,
}

impl NodeRegistry {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn category(&self, index: usize) -> Category {
        self.categories[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn insert(&mut self, id: &str, category: Category) -> Result<usize, GraphError> {
        if self.index.contains_key(id) {
            return Err(GraphError::DuplicateNode(id.to_string()));
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.categories.push(category);
        self.index.insert(id.to_string(), idx);
        Ok(idx)
    }
}

/// One snapshot: a node prefix, sorted adjacency lists and a feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Graphlet {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
    feature_dim: usize,
    features: Vec<f64>,
}

impl Graphlet {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn contains(&self, node: usize) -> bool {
        node < self.adjacency.len()
    }

    /// Sorted neighbours; empty for nodes outside this window.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.adjacency.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors(node).len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Feature row of `node`, `None` outside this window.
    pub fn features(&self, node: usize) -> Option<&[f64]> {
        if self.contains(node) {
            Some(&self.features[node * self.feature_dim..(node + 1) * self.feature_dim])
        } else {
            None
        }
    }

    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    /// All edges as canonical pairs, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = Pair> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, nbrs)| {
            nbrs.iter()
                .filter(move |&&b| b > a)
                .map(move |&b| Pair { lo: a, hi: b })
        })
    }

    fn insert_edge(&mut self, a: usize, b: usize) -> bool {
        match self.adjacency[a].binary_search(&b) {
            Ok(_) => false,
            Err(pos) => {
                self.adjacency[a].insert(pos, b);
                let pos = self.adjacency[b].binary_search(&a).unwrap_err();
                self.adjacency[b].insert(pos, a);
                self.edge_count += 1;
                true
            }
        }
    }
}

/// New content for one window, expressed against external ids.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub new_nodes: Vec<(String, Category)>,
    pub new_edges: Vec<(String, String)>,
    /// Row-major features for every node of the new window, in registry
    /// order (existing nodes first, then `new_nodes`).
    pub features: Vec<f64>,
}

/// The ordered sequence `G^1 ⊆ G^2 ⊆ … ⊆ G^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    registry: NodeRegistry,
    feature_dim: usize,
    windows: Vec<Graphlet>,
    new_edges: Vec<Vec<Pair>>,
}

impl TemporalGraph {
    pub fn new(feature_dim: usize) -> Self {
        assert!(feature_dim > 0, "feature dimension must be positive");
        Self {
            registry: NodeRegistry::default(),
            feature_dim,
            windows: Vec::new(),
            new_edges: Vec::new(),
        }
    }

    /// Number of windows `T`.
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn registry(&self) -> &NodeRegistry {
        &self.registry
    }

    /// Graphlet at 1-based time step `t`.
    pub fn window(&self, t: usize) -> &Graphlet {
        assert!(t >= 1 && t <= self.len(), "window {t} out of range 1..={}", self.len());
        &self.windows[t - 1]
    }

    pub fn last(&self) -> Option<&Graphlet> {
        self.windows.last()
    }

    fn check_t(&self, t: usize) -> Result<(), GraphError> {
        if t == 0 || t > self.len() {
            return Err(GraphError::TimeOutOfRange { t, len: self.len() });
        }
        Ok(())
    }

    /// Edges first present at window `t` (all edges for `t = 1`).
    pub fn new_edges(&self, t: usize) -> &[Pair] {
        &self.new_edges[t - 1]
    }

    /// Appends one window. New edges may reference existing or new nodes;
    /// edges already present are ignored.
    pub fn add_snapshot(&mut self, snapshot: Snapshot) -> Result<(), GraphError> {
        let Snapshot {
            new_nodes,
            new_edges,
            features,
        } = snapshot;

        let prev_nodes = self.registry.len();
        let total = prev_nodes + new_nodes.len();
        if features.len() != total * self.feature_dim {
            return Err(GraphError::FeatureShape {
                rows: total,
                dim: self.feature_dim,
                actual: features.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteFeature {
                node: i / self.feature_dim,
            });
        }

        // Validate everything before touching the registry.
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &new_nodes {
            if self.registry.get(id).is_some() || !seen.insert(id.as_str()) {
                return Err(GraphError::DuplicateNode(id.clone()));
            }
        }
        let resolve = |id: &str| -> Result<usize, GraphError> {
            self.registry
                .get(id)
                .or_else(|| new_nodes.iter().position(|(n, _)| n == id).map(|p| prev_nodes + p))
                .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
        };
        let mut resolved = Vec::with_capacity(new_edges.len());
        for (a, b) in &new_edges {
            let (ia, ib) = (resolve(a)?, resolve(b)?);
            if ia == ib {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            resolved.push((ia, ib));
        }

        for (id, category) in &new_nodes {
            self.registry.insert(id, *category)?;
        }
        let mut next = match self.windows.last() {
            Some(prev) => {
                let mut g = prev.clone();
                g.adjacency.resize(total, Vec::new());
                g
            }
            None => Graphlet {
                adjacency: vec![Vec::new(); total],
                edge_count: 0,
                feature_dim: self.feature_dim,
                features: Vec::new(),
            },
        };
        next.features = features;
        let mut added: Vec<Pair> = resolved
            .into_iter()
            .filter(|&(a, b)| next.insert_edge(a, b))
            .map(|(a, b)| Pair::new(a, b).expect("self loops rejected above"))
            .collect();
        added.sort_unstable();
        self.windows.push(next);
        self.new_edges.push(added);
        debug_assert!(self.check_monotone().is_ok());
        Ok(())
    }

    /// Appends a window given its complete node and edge sets; anything
    /// missing relative to the previous window is rejected.
    pub fn add_full_window(
        &mut self,
        nodes: &[(String, Category)],
        edges: &[(String, String)],
        features: Vec<f64>,
    ) -> Result<(), GraphError> {
        let window = self.len() + 1;
        let listed: std::collections::HashSet<&str> = nodes.iter().map(|(n, _)| n.as_str()).collect();
        for id in self.registry.ids() {
            if !listed.contains(id.as_str()) {
                return Err(GraphError::NodeRemoval {
                    window,
                    node: id.clone(),
                });
            }
        }
        if let Some(prev) = self.windows.last() {
            let given: std::collections::HashSet<(&str, &str)> = edges
                .iter()
                .flat_map(|(a, b)| [(a.as_str(), b.as_str()), (b.as_str(), a.as_str())])
                .collect();
            for p in prev.edges() {
                let (a, b) = (self.registry.id(p.lo), self.registry.id(p.hi));
                if !given.contains(&(a, b)) {
                    return Err(GraphError::Removal {
                        window,
                        a: a.to_string(),
                        b: b.to_string(),
                    });
                }
            }
        }
        // Features arrive in the order of `nodes`; reorder to registry order.
        let dim = self.feature_dim;
        if features.len() != nodes.len() * dim {
            return Err(GraphError::FeatureShape {
                rows: nodes.len(),
                dim,
                actual: features.len(),
            });
        }
        let new_nodes: Vec<(String, Category)> = nodes
            .iter()
            .filter(|(n, _)| self.registry.get(n).is_none())
            .cloned()
            .collect();
        let order: Vec<&str> = self
            .registry
            .ids()
            .iter()
            .map(String::as_str)
            .chain(new_nodes.iter().map(|(n, _)| n.as_str()))
            .collect();
        let position: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
        let mut reordered = Vec::with_capacity(features.len());
        for id in &order {
            let row = position[id];
            reordered.extend_from_slice(&features[row * dim..(row + 1) * dim]);
        }
        self.add_snapshot(Snapshot {
            new_nodes,
            new_edges: edges.to_vec(),
            features: reordered,
        })
    }

    /// Checks `V^t ⊆ V^{t+1}` and `E^t ⊆ E^{t+1}` for every consecutive pair.
    pub fn check_monotone(&self) -> Result<(), GraphError> {
        for (w, pair) in self.windows.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.node_count() < a.node_count() {
                return Err(GraphError::NodeRemoval {
                    window: w + 2,
                    node: self.registry.id(b.node_count()).to_string(),
                });
            }
            for e in a.edges() {
                if !b.has_edge(e.lo, e.hi) {
                    return Err(GraphError::Removal {
                        window: w + 2,
                        a: self.registry.id(e.lo).to_string(),
                        b: self.registry.id(e.hi).to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Label of `pair` at time step `t`: positive iff linked in `G^{t+1}`.
    /// At `t = T` the next window is unobserved and the label at `T - 1`
    /// is reused, which by monotonicity means "linked in `G^T`".
    pub fn pair_label(&self, t: usize, pair: Pair) -> Result<Label, GraphError> {
        self.check_t(t)?;
        let target = (t + 1).min(self.len());
        Ok(if self.window(target).has_edge(pair.lo, pair.hi) {
            Label::Positive
        } else {
            Label::Unlabeled
        })
    }

    /// The first `k` windows.
    pub fn truncated(&self, k: usize) -> Self {
        assert!(k >= 1 && k <= self.len(), "cannot truncate to {k} windows");
        let node_count = self.windows[k - 1].node_count();
        let mut registry = NodeRegistry::default();
        for i in 0..node_count {
            registry
                .insert(self.registry.id(i), self.registry.category(i))
                .expect("ids are unique");
        }
        Self {
            registry,
            feature_dim: self.feature_dim,
            windows: self.windows[..k].to_vec(),
            new_edges: self.new_edges[..k].to_vec(),
        }
    }

    /// Copy whose final window keeps its nodes and features but only the
    /// edges of the window before it. New nodes in the final window are
    /// therefore isolated and known only through their features.
    pub fn with_final_edges_hidden(&self) -> Self {
        let mut out = self.clone();
        let t = self.len();
        if t >= 2 {
            let prev = &self.windows[t - 2];
            let last = &mut out.windows[t - 1];
            let n = last.node_count();
            last.adjacency = prev.adjacency.clone();
            last.adjacency.resize(n, Vec::new());
            last.edge_count = prev.edge_count;
            out.new_edges[t - 1].clear();
        }
        out
    }

    /// Rebuilds a graph from validated parts (used by the snapshot loader).
    pub(crate) fn from_parts(
        feature_dim: usize,
        nodes: Vec<(String, Category)>,
        windows: Vec<(usize, Vec<(usize, usize)>, Vec<f64>)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(feature_dim);
        let mut introduced = 0;
        for (count, edges, features) in windows {
            if count < introduced || count > nodes.len() {
                return Err(GraphError::Format(format!("bad node count {count}")));
            }
            let new_nodes = nodes[introduced..count].to_vec();
            introduced = count;
            let mut named = Vec::with_capacity(edges.len());
            for (a, b) in edges {
                if a >= count || b >= count {
                    return Err(GraphError::NodeOutOfRange(a.max(b)));
                }
                named.push((nodes[a].0.clone(), nodes[b].0.clone()));
            }
            g.add_snapshot(Snapshot {
                new_nodes,
                new_edges: named,
                features,
            })?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(nodes: &[&str], edges: &[(&str, &str)], total: usize) -> Snapshot {
        Snapshot {
            new_nodes: nodes.iter().map(|n| (n.to_string(), Category::Other)).collect(),
            new_edges: edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            features: vec![0.0; total],
        }
    }

    #[test]
    fn first_snapshot() {
        let mut g = TemporalGraph::new(1);
        g.add_snapshot(snap(&["A", "B"], &[("A", "B")], 2)).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.window(1).node_count(), 2);
        assert_eq!(g.window(1).edge_count(), 1);
    }

    #[test]
    fn empty_window_keeps_edges() {
        let mut g = TemporalGraph::new(1);
        g.add_snapshot(snap(&["A", "B"], &[("A", "B")], 2)).unwrap();
        g.add_snapshot(snap(&[], &[], 2)).unwrap();
        assert_eq!(g.window(2).edges().collect::<Vec<_>>(), g.window(1).edges().collect::<Vec<_>>());
        assert!(g.new_edges(2).is_empty());
    }

    #[test]
    fn unknown_node_and_self_loop_are_rejected() {
        let mut g = TemporalGraph::new(1);
        assert!(matches!(
            g.add_snapshot(snap(&["A"], &[("A", "Z")], 1)),
            Err(GraphError::UnknownNode(_))
        ));
        assert!(matches!(
            g.add_snapshot(snap(&["A"], &[("A", "A")], 1)),
            Err(GraphError::SelfLoop(_))
        ));
        assert!(g.is_empty());
        assert!(g.registry().is_empty());
    }

    #[test]
    fn full_window_rejects_removals() {
        let mut g = TemporalGraph::new(1);
        let nodes = vec![("A".to_string(), Category::Gene), ("B".to_string(), Category::Disease)];
        g.add_full_window(&nodes, &[("A".into(), "B".into())], vec![1.0, 2.0]).unwrap();
        let err = g.add_full_window(&nodes, &[], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, GraphError::Removal { window: 2, .. }));
        let err = g.add_full_window(&nodes[..1], &[], vec![1.0]).unwrap_err();
        assert!(matches!(err, GraphError::NodeRemoval { .. }));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn full_window_reorders_features() {
        let mut g = TemporalGraph::new(1);
        let a = ("A".to_string(), Category::Other);
        let b = ("B".to_string(), Category::Other);
        g.add_full_window(&[a.clone()], &[], vec![1.0]).unwrap();
        g.add_full_window(&[b, a], &[("A".into(), "B".into())], vec![20.0, 10.0]).unwrap();
        assert_eq!(g.window(2).features(0), Some(&[10.0][..]));
        assert_eq!(g.window(2).features(1), Some(&[20.0][..]));
    }

    #[test]
    fn label_semantics() {
        let mut g = TemporalGraph::new(1);
        g.add_snapshot(snap(&["A", "B", "C"], &[("A", "B")], 3)).unwrap();
        g.add_snapshot(snap(&[], &[("B", "C")], 3)).unwrap();
        let bc = Pair::new(1, 2).unwrap();
        let ac = Pair::new(0, 2).unwrap();
        assert_eq!(g.pair_label(1, bc).unwrap(), Label::Positive);
        assert_eq!(g.pair_label(1, ac).unwrap(), Label::Unlabeled);
        // t = T reuses the label of T - 1
        assert_eq!(g.pair_label(2, bc).unwrap(), g.pair_label(1, bc).unwrap());
        assert!(matches!(g.pair_label(3, bc), Err(GraphError::TimeOutOfRange { .. })));
        assert!(g.pair_label(0, bc).is_err());
    }

    #[test]
    fn hidden_final_edges() {
        let mut g = TemporalGraph::new(1);
        g.add_snapshot(snap(&["A", "B"], &[("A", "B")], 2)).unwrap();
        g.add_snapshot(snap(&["C"], &[("B", "C")], 3)).unwrap();
        let h = g.with_final_edges_hidden();
        assert_eq!(h.window(2).node_count(), 3);
        assert_eq!(h.window(2).edge_count(), 1);
        assert_eq!(h.window(2).degree(2), 0);
        assert!(h.check_monotone().is_ok());
    }
}
