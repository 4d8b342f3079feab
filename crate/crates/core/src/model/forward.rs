use std::collections::BTreeMap;

use trp_autodiff::{Segment, Tape, Tensor, Var};

use super::{AggLayer, AggregatorKind, ClassifierParams, GruParams, ModelConfig, ModelError, ModelParams, Params};
use crate::graph::{sample_from, Graphlet, Pair, TemporalGraph};
use crate::parallel::Workers;
use crate::seed;

/// Pairs scored per tape by [`score_pairs`]. Results do not depend on it.
pub const SCORE_CHUNK: usize = 128;

/// Seed of the neighbourhood tree of `node` at time step `tau`.
pub fn tree_seed(step_seed: u64, tau: usize, node: usize) -> u64 {
    seed::derive(step_seed, &[tau as u64, node as u64])
}

/// Sampled computation tree of one or more roots. `levels[0]` holds the
/// roots; `segments[k][i]` locates the children of `levels[k][i]` inside
/// `levels[k + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTree {
    pub levels: Vec<Vec<usize>>,
    pub segments: Vec<Vec<Segment>>,
}

impl SampledTree {
    /// Number of feature rows touched by aggregation.
    pub fn fetch_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    fn append(&mut self, other: SampledTree) {
        for (k, level) in other.levels.into_iter().enumerate() {
            if k < other.segments.len() {
                let offset = self.levels[k + 1].len();
                self.segments[k].extend(other.segments[k].iter().map(|s| Segment {
                    start: s.start + offset,
                    len: s.len,
                }));
            }
            self.levels[k].extend(level);
        }
    }
}

/// Samples `sizes[k]` neighbours for every node at depth `k`.
pub fn sample_tree(graphlet: &Graphlet, node: usize, sizes: &[usize], seed: u64) -> SampledTree {
    let mut levels = vec![vec![node]];
    let mut segments = Vec::with_capacity(sizes.len());
    for (k, &size) in sizes.iter().enumerate() {
        let mut next = Vec::new();
        let mut segs = Vec::with_capacity(levels[k].len());
        for (pos, &v) in levels[k].iter().enumerate() {
            let children = sample_from(graphlet.neighbors(v), size, seed::derive(seed, &[k as u64, pos as u64]));
            segs.push(Segment {
                start: next.len(),
                len: children.len(),
            });
            next.extend(children);
        }
        segments.push(segs);
        levels.push(next);
    }
    SampledTree { levels, segments }
}

fn feature_block(rows: impl Iterator<Item = Option<Vec<f64>>>, dim: usize) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for row in rows {
        match row {
            Some(r) => data.extend(r),
            None => data.extend(std::iter::repeat_n(0.0, dim)),
        }
        n += 1;
    }
    Tensor::new(vec![n, dim], data).expect("features are finite")
}

/// Runs the aggregation layers over `tree` and returns `[roots, d]`.
/// `root_features` overrides the feature rows of level 0.
fn aggregate_tree(
    tape: &mut Tape,
    layers: &[AggLayer<Var>],
    kind: AggregatorKind,
    config: &ModelConfig,
    graphlet: &Graphlet,
    tree: &SampledTree,
    root_features: Option<Tensor>,
) -> Var {
    let depth = layers.len();
    let f = config.feature_dim;
    let mut current: Vec<Option<Var>> = tree
        .levels
        .iter()
        .enumerate()
        .map(|(k, level)| {
            if level.is_empty() {
                return None;
            }
            let block = match (&root_features, k) {
                (Some(t), 0) => t.clone(),
                _ => feature_block(level.iter().map(|&v| graphlet.features(v).map(<[f64]>::to_vec)), f),
            };
            Some(tape.constant(block))
        })
        .collect();
    let mut width = f;
    for (i, layer) in layers.iter().enumerate() {
        let m = i + 1;
        let mut next = Vec::with_capacity(depth - m + 1);
        for k in 0..=depth - m {
            let n_k = tree.levels[k].len();
            let Some(own) = current[k] else {
                next.push(None);
                continue;
            };
            let neigh = match current[k + 1] {
                None => tape.constant(Tensor::zeros(&[n_k, width])),
                Some(child) => match kind {
                    AggregatorKind::Mean => tape.segment_mean(child, &tree.segments[k]),
                    AggregatorKind::MaxPool => {
                        let pool = layer.pool.as_ref().expect("max-pool layer has pool weights");
                        let p = tape.matmul(child, pool.weight);
                        let p = tape.add_row(p, pool.bias);
                        let p = tape.relu(p);
                        tape.segment_max(p, &tree.segments[k])
                    }
                },
            };
            let cat = tape.concat_cols(&[own, neigh]);
            let out = tape.matmul(cat, layer.weight);
            let out = tape.add_row(out, layer.bias);
            let out = if m < depth { tape.relu(out) } else { out };
            next.push(Some(out));
        }
        current = next;
        width = config.dim;
    }
    current[0].expect("roots are never empty")
}

/// One recurrent step `h = 𝒫∘h̃ + (1 − 𝒫)∘h_prev` with input `x`.
fn gru_step(tape: &mut Tape, g: &GruParams<Var>, x: Var, h: Var) -> Var {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var| {
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        let s = tape.add_row(s, b);
        tape.sigmoid(s)
    };
    let update = gate(tape, g.w_update, g.u_update, g.b_update);
    let reset = gate(tape, g.w_reset, g.u_reset, g.b_reset);
    let hu = tape.matmul(h, g.u_cand);
    let rhu = tape.mul(reset, hu);
    let xw = tape.matmul(x, g.w_cand);
    let c = tape.add(xw, rhu);
    let c = tape.add_row(c, g.b_cand);
    let cand = tape.tanh(c);
    let kept = tape.mul(update, cand);
    let neg = tape.neg(update);
    let one_minus = tape.add_scalar(neg, 1.0);
    let carried = tape.mul(one_minus, h);
    tape.add(kept, carried)
}

fn classify_on_tape(tape: &mut Tape, c: &ClassifierParams<Var>, h: Var) -> Var {
    let s = tape.matmul(h, c.weight);
    tape.add_row(s, c.bias)
}

/// Tape handles produced by [`forward_batch`].
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    /// `[pairs, 1]` connectivity scores.
    pub scores: Var,
    /// `[pairs, d]` final pair embeddings `h^t`.
    pub embeddings: Var,
}

/// Scores `pairs` at time step `t` by running the recurrence over windows
/// `1..=t`. Nodes absent from a window contribute zero features and no
/// neighbours there.
///
/// With `lookahead`, endpoints that only exist from window `t + 1` take
/// their window `t + 1` features at step `t` (still without neighbours),
/// the training-time analogue of scoring new nodes at inference.
#[allow(clippy::too_many_arguments)]
pub fn forward_batch(
    tape: &mut Tape,
    params: &Params<Var>,
    config: &ModelConfig,
    graph: &TemporalGraph,
    pairs: &[Pair],
    t: usize,
    step_seed: u64,
    lookahead: bool,
) -> Result<BatchOutput, ModelError> {
    if t == 0 || t > graph.len() {
        return Err(ModelError::TimeOutOfRange { t, len: graph.len() });
    }
    if graph.feature_dim() != config.feature_dim {
        return Err(ModelError::FeatureDim {
            graph: graph.feature_dim(),
            model: config.feature_dim,
        });
    }
    assert!(!pairs.is_empty(), "forward_batch needs at least one pair");
    let ahead = (lookahead && t < graph.len()).then(|| graph.window(t + 1));
    let limit = ahead.unwrap_or(graph.window(t)).node_count();
    for p in pairs {
        if p.hi() >= limit {
            return Err(ModelError::NodeNotPresent { node: p.hi(), t });
        }
    }

    let mut unique: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        unique.insert(p.lo(), 0);
        unique.insert(p.hi(), 0);
    }
    for (i, slot) in unique.values_mut().enumerate() {
        *slot = i;
    }
    let nodes: Vec<usize> = unique.keys().copied().collect();
    let left: Vec<usize> = pairs.iter().map(|p| unique[&p.lo()]).collect();
    let right: Vec<usize> = pairs.iter().map(|p| unique[&p.hi()]).collect();

    let b = pairs.len();
    let mut h = tape.constant(Tensor::zeros(&[b, config.dim]));
    for tau in 1..=t {
        let g = graph.window(tau);
        let mut tree = SampledTree {
            levels: vec![Vec::new(); config.depth() + 1],
            segments: vec![Vec::new(); config.depth()],
        };
        for &v in &nodes {
            tree.append(sample_tree(g, v, &config.sample_sizes, tree_seed(step_seed, tau, v)));
        }
        let root_features = match ahead {
            Some(next) if tau == t => Some(feature_block(
                nodes.iter().map(|&v| {
                    g.features(v)
                        .or_else(|| next.features(v))
                        .map(<[f64]>::to_vec)
                }),
                config.feature_dim,
            )),
            _ => None,
        };
        let z = aggregate_tree(tape, &params.aggregator, config.aggregator, config, g, &tree, root_features);
        let zi = tape.gather_rows(z, &left);
        let zj = tape.gather_rows(z, &right);
        let x = tape.maximum(zi, zj);
        h = gru_step(tape, &params.gru, x, h);
    }
    let scores = classify_on_tape(tape, &params.classifier, h);
    Ok(BatchOutput {
        scores,
        embeddings: h,
    })
}

fn constants(tape: &mut Tape, params: &ModelParams) -> Params<Var> {
    params.map(|_, t| tape.constant(t.clone()))
}

/// Scores and final embeddings of `pairs` at time step `t`, evaluated in
/// fixed chunks so that results are identical for any worker count.
pub fn score_pairs(
    params: &ModelParams,
    config: &ModelConfig,
    graph: &TemporalGraph,
    pairs: &[Pair],
    t: usize,
    seed: u64,
    workers: &Workers,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), ModelError> {
    let chunks: Vec<&[Pair]> = pairs.chunks(SCORE_CHUNK).collect();
    let results = workers.map(&chunks, |chunk| {
        let mut tape = Tape::new();
        let vars = constants(&mut tape, params);
        let out = forward_batch(&mut tape, &vars, config, graph, chunk, t, seed, false)?;
        let scores = tape.value(out.scores).data().to_vec();
        let emb = tape.value(out.embeddings);
        let rows = (0..chunk.len()).map(|r| emb.row_slice(r).to_vec()).collect::<Vec<_>>();
        Ok::<_, ModelError>((scores, rows))
    });
    let mut scores = Vec::with_capacity(pairs.len());
    let mut embeddings = Vec::with_capacity(pairs.len());
    for r in results {
        let (s, e) = r?;
        scores.extend(s);
        embeddings.extend(e);
    }
    Ok((scores, embeddings))
}

/// Score `p^t` of a single pair.
pub fn pair_score_sequence(
    graph: &TemporalGraph,
    pair: Pair,
    params: &ModelParams,
    config: &ModelConfig,
    t: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let vars = constants(&mut tape, params);
    let out = forward_batch(&mut tape, &vars, config, graph, &[pair], t, seed, false)?;
    Ok(tape.value(out.scores).item())
}

/// Embedding `z_v` of one node, using the tree drawn from `seed`.
pub fn aggregate(
    graphlet: &Graphlet,
    node: usize,
    params: &ModelParams,
    config: &ModelConfig,
    seed: u64,
) -> Result<Vec<f64>, ModelError> {
    if !graphlet.contains(node) {
        return Err(ModelError::NodeNotPresent { node, t: 0 });
    }
    if graphlet.feature_dim() != config.feature_dim {
        return Err(ModelError::FeatureDim {
            graph: graphlet.feature_dim(),
            model: config.feature_dim,
        });
    }
    let mut tape = Tape::new();
    let vars = constants(&mut tape, params);
    let tree = sample_tree(graphlet, node, &config.sample_sizes, seed);
    let z = aggregate_tree(&mut tape, &vars.aggregator, config.aggregator, config, graphlet, &tree, None);
    Ok(tape.value(z).data().to_vec())
}

/// Elementwise maximum of two node embeddings.
pub fn maxpool_combine(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "maxpool_combine dimension mismatch");
    a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect()
}

/// One recurrent update of a pair state from its endpoint embeddings.
pub fn pair_update(h_prev: &[f64], z_i: &[f64], z_j: &[f64], gru: &GruParams<Tensor>) -> Vec<f64> {
    let d = h_prev.len();
    let mut tape = Tape::new();
    let g = GruParams {
        w_update: tape.constant(gru.w_update.clone()),
        u_update: tape.constant(gru.u_update.clone()),
        b_update: tape.constant(gru.b_update.clone()),
        w_reset: tape.constant(gru.w_reset.clone()),
        u_reset: tape.constant(gru.u_reset.clone()),
        b_reset: tape.constant(gru.b_reset.clone()),
        w_cand: tape.constant(gru.w_cand.clone()),
        u_cand: tape.constant(gru.u_cand.clone()),
        b_cand: tape.constant(gru.b_cand.clone()),
    };
    let x = tape.constant(Tensor::row(maxpool_combine(z_i, z_j)).expect("finite input"));
    let h = tape.constant(Tensor::new(vec![1, d], h_prev.to_vec()).expect("finite state"));
    let out = gru_step(&mut tape, &g, x, h);
    tape.value(out).data().to_vec()
}

/// Affine score `h · w + b`.
pub fn classify(h: &[f64], c: &ClassifierParams<Tensor>) -> f64 {
    assert_eq!(h.len(), c.weight.len(), "classifier dimension mismatch");
    h.iter().zip(c.weight.data()).map(|(a, b)| a * b).sum::<f64>() + c.bias.item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Category, Snapshot};

    fn tiny() -> TemporalGraph {
        let mut g = TemporalGraph::new(2);
        g.add_snapshot(Snapshot {
            new_nodes: ["a", "b", "c"].iter().map(|s| (s.to_string(), Category::Other)).collect(),
            new_edges: vec![("a".into(), "b".into()), ("a".into(), "c".into())],
            features: vec![1.0, 0.0, 3.0, 3.0, 5.0, 5.0],
        })
        .unwrap();
        g
    }

    fn config() -> ModelConfig {
        ModelConfig::new(2, 2, vec![2])
    }

    #[test]
    fn mean_neighbour_summary() {
        // Identity on the neighbour block exposes the neighbour mean.
        let g = tiny();
        let mut p = ModelParams::zeros(&config());
        p.aggregator[0].weight = Tensor::matrix(4, 2, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        // with degree 2 and sample size 2 the sample is both neighbours
        let z = aggregate(g.window(1), 0, &p, &config(), 5).unwrap();
        assert_eq!(z, vec![4.0, 4.0]);
    }

    #[test]
    fn zero_parameters_score_bias() {
        let g = tiny();
        let mut p = ModelParams::zeros(&config());
        p.classifier.bias = Tensor::matrix(1, 1, vec![0.75]).unwrap();
        let s = pair_score_sequence(&g, Pair::new(1, 2).unwrap(), &p, &config(), 1, 0).unwrap();
        assert_eq!(s, 0.75);
    }

    #[test]
    fn zero_gru_halves_state() {
        let p = ModelParams::zeros(&ModelConfig::new(2, 3, vec![1]));
        let h = pair_update(&[2.0, -4.0, 0.5], &[1.0, 2.0, 3.0], &[0.0, 0.0, 9.0], &p.gru);
        assert_eq!(h, vec![1.0, -2.0, 0.25]);
    }

    #[test]
    fn combine_and_classify() {
        assert_eq!(maxpool_combine(&[1.0, 5.0], &[3.0, 2.0]), vec![3.0, 5.0]);
        let c = ClassifierParams {
            weight: Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(),
            bias: Tensor::matrix(1, 1, vec![0.0]).unwrap(),
        };
        assert_eq!(classify(&[1.0, 0.0], &c), 1.0);
    }

    #[test]
    fn fetch_count_bound() {
        let g = tiny();
        let t = sample_tree(g.window(1), 0, &[3, 2], 1);
        assert!(t.fetch_count() <= 1 + 3 + 3 * 2);
        assert_eq!(t.levels[1].len(), 3);
    }

    #[test]
    fn chunking_does_not_change_scores() {
        let g = tiny();
        let c = ModelConfig::new(2, 3, vec![2, 2]);
        let p = ModelParams::init(&c, 1);
        let pairs: Vec<Pair> = (0..3).flat_map(|a| (a + 1..3).map(move |b| Pair::new(a, b).unwrap())).collect();
        let (all, _) = score_pairs(&p, &c, &g, &pairs, 1, 4, &Workers::new(1)).unwrap();
        for (i, pair) in pairs.iter().enumerate() {
            let one = pair_score_sequence(&g, *pair, &p, &c, 1, 4).unwrap();
            assert_eq!(one.to_bits(), all[i].to_bits());
        }
    }
}
