use rand::seq::index;
use rand::Rng;

use super::{GraphError, Graphlet};
use crate::seed;

/// Fixed-size uniform neighbour sample of `node`.
///
/// Without replacement when the degree covers `size`, with replacement when
/// it does not, and empty for isolated nodes.
pub fn sample_neighbors(
    graphlet: &Graphlet,
    node: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<usize>, GraphError> {
    if !graphlet.contains(node) {
        return Err(GraphError::NodeOutOfRange(node));
    }
    if size == 0 {
        return Err(GraphError::ZeroSampleSize);
    }
    Ok(sample_from(graphlet.neighbors(node), size, seed))
}

pub(crate) fn sample_from(neighbors: &[usize], size: usize, seed: u64) -> Vec<usize> {
    let degree = neighbors.len();
    if degree == 0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    if degree >= size {
        index::sample(&mut rng, degree, size)
            .into_iter()
            .map(|i| neighbors[i])
            .collect()
    } else {
        (0..size)
            .map(|_| neighbors[rng.random_range(0..degree)])
            .collect()
    }
}
