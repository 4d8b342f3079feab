//! Planted-community temporal graphs with known structure.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{Category, Pair, Snapshot, TemporalGraph};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub communities: usize,
    pub windows: usize,
    pub feature_dim: usize,
    /// Share of nodes present from the first window; the rest arrive evenly
    /// over later windows.
    pub initial_fraction: f64,
    /// New within-community edges per window.
    pub intra_edges: usize,
    /// New cross-community edges per window.
    pub inter_edges: usize,
    /// Standard deviation of node features around their community centroid.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            communities: 3,
            windows: 5,
            feature_dim: 16,
            initial_fraction: 0.8,
            intra_edges: 120,
            inter_edges: 10,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes < 2 {
            return Err("need at least 2 nodes".into());
        }
        if self.windows == 0 || self.communities == 0 || self.feature_dim == 0 {
            return Err("windows, communities and feature_dim must be positive".into());
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err("initial_fraction must be in (0, 1]".into());
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err("feature_noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthGraph {
    pub graph: TemporalGraph,
    /// Community of every node, indexed like the graph registry.
    pub communities: Vec<usize>,
}

/// Generates a graph in which links form almost only inside communities
/// and node features are noisy copies of a per-community centroid.
pub fn generate(config: &SynthConfig) -> SynthGraph {
    if let Err(e) = config.validate() {
        panic!("invalid synthetic config: {e}");
    }
    let mut rng = seed::rng(seed::derive(config.seed, &[0x5359_4e54]));
    let noise = Normal::new(0.0, config.feature_noise.max(1e-12)).expect("valid noise");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let centroids: Vec<Vec<f64>> = (0..config.communities)
        .map(|_| (0..config.feature_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let communities: Vec<usize> = (0..config.nodes).map(|_| rng.random_range(0..config.communities)).collect();
    let features: Vec<Vec<f64>> = communities
        .iter()
        .map(|&c| centroids[c].iter().map(|&m| m + noise.sample(&mut rng)).collect())
        .collect();

    // Arrival window of each node: a prefix at window 1, the rest spread
    // evenly over the remaining windows.
    let initial = ((config.nodes as f64 * config.initial_fraction).round() as usize).clamp(2, config.nodes);
    let late = config.nodes - initial;
    let arrival = |v: usize| -> usize {
        if v < initial || config.windows == 1 {
            1
        } else {
            2 + (v - initial) * (config.windows - 1) / late.max(1)
        }
    };

    let categories = [Category::Gene, Category::Chemical, Category::Disease];
    let mut graph = TemporalGraph::new(config.feature_dim);
    let mut linked: HashSet<Pair> = HashSet::new();
    let mut present = 0;
    for w in 1..=config.windows {
        let start = present;
        while present < config.nodes && arrival(present) == w {
            present += 1;
        }
        let mut edges = Vec::new();
        let mut add = |rng: &mut rand_chacha::ChaCha8Rng, want: usize, intra: bool| {
            let mut added = 0;
            let mut attempts = 0;
            while added < want && attempts < 200 * want.max(1) {
                attempts += 1;
                let a = rng.random_range(0..present);
                let b = rng.random_range(0..present);
                if (communities[a] == communities[b]) != intra {
                    continue;
                }
                let Some(p) = Pair::new(a, b) else { continue };
                if linked.insert(p) {
                    edges.push((format!("v{a:03}"), format!("v{b:03}")));
                    added += 1;
                }
            }
        };
        add(&mut rng, config.intra_edges, true);
        add(&mut rng, config.inter_edges, false);
        let mut flat = Vec::with_capacity(present * config.feature_dim);
        for f in &features[..present] {
            flat.extend_from_slice(f);
        }
        graph
            .add_snapshot(Snapshot {
                new_nodes: (start..present)
                    .map(|v| (format!("v{v:03}"), categories[communities[v] % 3]))
                    .collect(),
                new_edges: edges,
                features: flat,
            })
            .expect("generated snapshot is valid");
    }
    SynthGraph { graph, communities }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let s = generate(&SynthConfig::default());
        let g = &s.graph;
        assert_eq!(g.len(), 5);
        assert_eq!(g.window(1).node_count(), 160);
        assert_eq!(g.window(5).node_count(), 200);
        assert!(g.check_monotone().is_ok());
        let intra = g
            .window(5)
            .edges()
            .filter(|p| s.communities[p.lo()] == s.communities[p.hi()])
            .count();
        assert!(intra as f64 > 0.85 * g.window(5).edge_count() as f64);
        for t in 2..=5 {
            assert!(!g.new_edges(t).is_empty());
        }
    }

    #[test]
    fn seeded() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a.graph, b.graph);
        let c = generate(&SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        });
        assert_ne!(a.graph, c.graph);
    }
}
