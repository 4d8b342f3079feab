//! Held-out evaluation, the per-window protocol and learning-rate search.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{sample_non_edges, Pair, TemporalGraph};
use crate::metrics::{f1_pu, f1_scores, lrap, Confusion, MetricError};
use crate::model::{score_pairs, ModelConfig, ModelError, ModelParams};
use crate::parallel::Workers;
use crate::seed;
use crate::train::{train, History, TrainConfig, TrainError};

/// Learning rates searched by default.
pub const DEFAULT_LR_GRID: [f64; 4] = [1e-2, 5e-3, 1e-3, 5e-2];

const EVAL_UNLABELED: u64 = 11;
const EVAL_SCORE: u64 = 12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("window {0} has no new links to evaluate")]
    NoTestPositives(usize),
    #[error("evaluation needs at least {need} windows, graph has {have}")]
    TooFewWindows { need: usize, have: usize },
    #[error("every learning rate diverged: {0}")]
    AllDiverged(String),
    #[error("empty learning-rate grid")]
    EmptyGrid,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Unlabeled test pairs per test positive.
    pub unlabeled_factor: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            unlabeled_factor: 1.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: usize,
    pub estimator: String,
    pub f1_s: f64,
    pub f1_m: f64,
    pub f1_p: f64,
    pub lrap: f64,
    pub counts: Confusion,
    pub positives: usize,
    pub unlabeled: usize,
    pub pi_hat: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Test pairs of the final window: links new in `G^T` and a sample of
/// pairs still unlinked in `G^T`.
pub fn test_pairs(graph: &TemporalGraph, config: &EvalConfig) -> Result<(Vec<Pair>, Vec<Pair>), EvalError> {
    let t = graph.len();
    if t < 2 {
        return Err(EvalError::TooFewWindows { need: 2, have: t });
    }
    let positives = graph.new_edges(t).to_vec();
    if positives.is_empty() {
        return Err(EvalError::NoTestPositives(t));
    }
    let n = (config.unlabeled_factor * positives.len() as f64).round() as usize;
    let (unlabeled, short) = sample_non_edges(graph.window(t), n, seed::derive(config.seed, &[EVAL_UNLABELED, t as u64]));
    if short {
        log::warn!("window {t}: only {} unlinked pairs available for testing", unlabeled.len());
    }
    Ok((positives, unlabeled))
}

/// Metrics of arbitrary scores against observed labels, thresholded at 0.
pub fn report_from_scores(window: usize, estimator: &str, scores: &[f64], labels: &[bool]) -> Result<MetricsReport, EvalError> {
    let predictions: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
    let (f1_s, f1_m) = f1_scores(&predictions, labels)?;
    Ok(MetricsReport {
        window,
        estimator: estimator.to_string(),
        f1_s,
        f1_m,
        f1_p: f1_pu(&predictions, labels)?,
        lrap: lrap(scores, labels)?,
        counts: Confusion::new(&predictions, labels)?,
        positives: labels.iter().filter(|&&l| l).count(),
        unlabeled: labels.iter().filter(|&&l| !l).count(),
        pi_hat: Vec::new(),
        loss: Vec::new(),
    })
}

/// Scores the final window's test pairs. The model sees the final window's
/// nodes and features but only the links of the window before it.
pub fn evaluate(
    params: &ModelParams,
    model: &ModelConfig,
    graph: &TemporalGraph,
    config: &EvalConfig,
    workers: &Workers,
) -> Result<(MetricsReport, Vec<f64>), EvalError> {
    let (positives, unlabeled) = test_pairs(graph, config)?;
    let view = graph.with_final_edges_hidden();
    let pairs: Vec<Pair> = positives.iter().chain(&unlabeled).copied().collect();
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < positives.len()).collect();
    let t = graph.len();
    let (scores, _) = score_pairs(params, model, &view, &pairs, t, seed::derive(config.seed, &[EVAL_SCORE]), workers)?;
    let report = report_from_scores(t, "", &scores, &labels)?;
    Ok((report, scores))
}

/// Trains on every window but the last and evaluates on the last.
pub fn train_and_evaluate(
    graph: &TemporalGraph,
    model: &ModelConfig,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
    workers: &Workers,
) -> Result<(MetricsReport, ModelParams, History), EvalError> {
    if graph.len() < 2 {
        return Err(EvalError::TooFewWindows {
            need: 2,
            have: graph.len(),
        });
    }
    // Fail before training when there is nothing to test.
    test_pairs(graph, eval_config)?;
    let outcome = train(&graph.truncated(graph.len() - 1), model, train_config, workers)?;
    let (mut report, _) = evaluate(&outcome.params, model, graph, eval_config, workers)?;
    report.estimator = train_config.estimator.to_string();
    report.pi_hat = outcome.history.pi_hat();
    report.loss = outcome.history.losses();
    Ok((report, outcome.params, outcome.history))
}

/// For each window `t >= start`, trains on windows `1..t` and evaluates on
/// the links new at `t`. Windows without new links are skipped.
pub fn incremental_eval(
    graph: &TemporalGraph,
    model: &ModelConfig,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
    start: usize,
    workers: &Workers,
) -> Result<Vec<MetricsReport>, EvalError> {
    if graph.len() < 2 {
        return Err(EvalError::TooFewWindows {
            need: 2,
            have: graph.len(),
        });
    }
    let mut out = Vec::new();
    for t in start.max(2)..=graph.len() {
        let view = graph.truncated(t);
        match train_and_evaluate(&view, model, train_config, eval_config, workers) {
            Ok((report, _, _)) => out.push(report),
            Err(EvalError::NoTestPositives(w)) => log::warn!("window {w}: no new links, point skipped"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One learning rate's outcome in a grid search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    /// `None` when training diverged.
    pub f1_s: Option<f64>,
    pub history: Option<History>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_lr: f64,
    pub points: Vec<GridPoint>,
}

/// Trains from scratch once per learning rate on all but the last window,
/// scores F1-S on the last, and picks the best rate (lower rate on ties).
/// Diverged runs are reported and excluded. Also returns the selected
/// run's parameters.
pub fn grid_search(
    graph: &TemporalGraph,
    model: &ModelConfig,
    train_config: &TrainConfig,
    eval_config: &EvalConfig,
    grid: &[f64],
    workers: &Workers,
) -> Result<(GridResult, ModelParams), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, ModelParams)> = None;
    for &lr in grid {
        let cfg = TrainConfig {
            lr,
            ..train_config.clone()
        };
        match train_and_evaluate(graph, model, &cfg, eval_config, workers) {
            Ok((report, params, history)) => {
                let f = report.f1_s;
                let better = match &best {
                    None => true,
                    Some((blr, bf, _)) => f > *bf || (f == *bf && lr < *blr),
                };
                if better {
                    best = Some((lr, f, params));
                }
                points.push(GridPoint {
                    lr,
                    f1_s: Some(f),
                    history: Some(history),
                    error: None,
                });
            }
            Err(EvalError::Train(e @ TrainError::Diverged { .. })) => {
                log::warn!("learning rate {lr}: {e}");
                points.push(GridPoint {
                    lr,
                    f1_s: None,
                    history: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((best_lr, _, params)) => Ok((GridResult { best_lr, points }, params)),
        None => Err(EvalError::AllDiverged(
            points
                .iter()
                .filter_map(|p| p.error.clone())
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

/// Learning-curve rows `window,estimator,metric,value`.
pub fn write_curves<W: Write>(mut w: W, reports: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(w, "window,estimator,metric,value")?;
    for r in reports {
        for (name, v) in [("f1_s", r.f1_s), ("f1_m", r.f1_m), ("f1_p", r.f1_p), ("lrap", r.lrap)] {
            writeln!(w, "{},{},{},{}", r.window, r.estimator, name, v)?;
        }
    }
    Ok(())
}

const PREDICT_SCORE: u64 = 13;

/// A candidate partner and its score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partner {
    pub id: String,
    pub score: f64,
}

/// Top-`k` partners of `node` among nodes of the final window it is not
/// yet linked to, by descending score. Ties go to the earlier node.
pub fn rank_partners(
    params: &ModelParams,
    model: &ModelConfig,
    graph: &TemporalGraph,
    node: usize,
    k: usize,
    seed: u64,
    workers: &Workers,
) -> Result<Vec<Partner>, EvalError> {
    let t = graph.len();
    let last = graph.window(t);
    if !last.contains(node) {
        return Err(EvalError::Model(ModelError::NodeNotPresent { node, t }));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<usize> = (0..last.node_count()).filter(|&v| v != node && !last.has_edge(node, v)).collect();
    let pairs: Vec<Pair> = candidates.iter().filter_map(|&v| Pair::new(node, v)).collect();
    let (scores, _) = score_pairs(params, model, graph, &pairs, t, seed::derive(seed, &[PREDICT_SCORE]), workers)?;
    let mut ranked: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(v, score)| Partner {
            id: graph.registry().id(v).to_string(),
            score,
        })
        .collect())
}
