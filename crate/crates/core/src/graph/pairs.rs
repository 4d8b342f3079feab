use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{GraphError, Graphlet, Pair, PairSample, TemporalGraph};
use crate::seed;

/// Positive and unlabeled pairs for one time step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingPairs {
    pub positives: Vec<PairSample>,
    pub unlabeled: Vec<PairSample>,
    /// Set when fewer non-edges existed than were requested.
    pub shortfall: bool,
}

/// Up to `n` distinct non-edges of `graphlet`, drawn uniformly. The second
/// value is `true` when fewer than `n` non-edges exist, in which case all of
/// them are returned.
pub fn sample_non_edges(graphlet: &Graphlet, n: usize, seed: u64) -> (Vec<Pair>, bool) {
    let nodes = graphlet.node_count();
    let total = nodes * nodes.saturating_sub(1) / 2;
    let available = total - graphlet.edge_count();
    let mut rng = seed::rng(seed);

    if n >= available || n * 2 > available {
        let mut all: Vec<Pair> = (0..nodes)
            .flat_map(|a| (a + 1..nodes).map(move |b| (a, b)))
            .filter(|&(a, b)| !graphlet.has_edge(a, b))
            .map(|(a, b)| Pair { lo: a, hi: b })
            .collect();
        all.shuffle(&mut rng);
        let shortfall = n > available;
        all.truncate(n);
        return (all, shortfall);
    }

    // Sparse regime: rejection sampling terminates quickly because at least
    // half the candidates are accepted.
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        let Some(p) = Pair::new(a, b) else { continue };
        if graphlet.has_edge(a, b) || !seen.insert(p) {
            continue;
        }
        out.push(p);
    }
    (out, false)
}

/// Pairs for time step `t`: every edge of the labelling window
/// `min(t + 1, T)` as a positive, plus `n_unlabeled` sampled non-edges of
/// that window.
pub fn build_training_pairs(
    graph: &TemporalGraph,
    t: usize,
    n_unlabeled: usize,
    seed: u64,
) -> Result<TrainingPairs, GraphError> {
    graph.check_t(t)?;
    let target = graph.window((t + 1).min(graph.len()));
    let positives = target
        .edges()
        .map(|pair| PairSample {
            pair,
            t,
            observed: true,
        })
        .collect();
    let (sampled, shortfall) = sample_non_edges(target, n_unlabeled, seed);
    if shortfall {
        log::warn!(
            "time step {t}: requested {n_unlabeled} unlabeled pairs, only {} non-edges exist",
            sampled.len()
        );
    }
    let unlabeled = sampled
        .into_iter()
        .map(|pair| PairSample {
            pair,
            t,
            observed: false,
        })
        .collect();
    Ok(TrainingPairs {
        positives,
        unlabeled,
        shortfall,
    })
}
