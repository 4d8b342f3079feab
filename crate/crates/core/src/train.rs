//! Joint training of the scoring networks and the prior estimate.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trp_autodiff::{Adam, AdamConfig, Tape, Tensor, Var};

use crate::graph::{build_training_pairs, sample_non_edges, GraphError, Pair, TemporalGraph};
use crate::model::{forward_batch, ModelConfig, ModelError, ModelParams, Params};
use crate::parallel::Workers;
use crate::prior::{elbo_on_tape, estimate_prior, fit_mixture, FitConfig, MixtureParams, Posterior, VariationalPosterior};
use crate::risk::{risk_on_tape, Estimator};
use crate::seed;

/// Pairs per tape during training. Gradients do not depend on the worker
/// count because chunk results are reduced in order.
pub const TRAIN_CHUNK: usize = 64;

// Stream tags for seed derivation.
const INIT: u64 = 1;
const UNLABELED: u64 = 2;
const SHUFFLE: u64 = 3;
const STEP: u64 = 4;
const RESERVOIR: u64 = 5;
const PRIOR: u64 = 6;
const HIDE: u64 = 7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no time step has both positive and unlabeled pairs")]
    NoTrainingPairs,
    #[error("training diverged in epoch {epoch} at learning rate {lr}: {reason}")]
    Diverged {
        epoch: usize,
        lr: f64,
        reason: String,
        norms: Vec<(String, f64)>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Settings of the per-epoch mixture fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    pub steps: usize,
    pub lr: f64,
    pub mc_samples: usize,
    /// Embeddings kept per epoch for fitting.
    pub reservoir: usize,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            mc_samples: 1,
            reservoir: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub estimator: Estimator,
    pub lr: f64,
    pub epochs: usize,
    pub batch_positive: usize,
    pub batch_unlabeled: usize,
    /// Unlabeled pairs sampled per positive pair at every time step.
    pub unlabeled_ratio: f64,
    /// Epochs between prior re-estimates; 0 keeps the initial value.
    pub prior_cadence: usize,
    pub prior: PriorSettings,
    /// Share of positive pairs moved to the unlabeled set.
    pub hidden_positive_fraction: f64,
    /// Any parameter coordinate beyond this magnitude counts as divergence.
    pub max_param_abs: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Upu,
            lr: 5e-3,
            epochs: 10,
            batch_positive: 64,
            batch_unlabeled: 128,
            unlabeled_ratio: 2.0,
            prior_cadence: 1,
            prior: PriorSettings::default(),
            hidden_positive_fraction: 0.0,
            max_param_abs: 1e3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_positive == 0 || self.batch_unlabeled == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.unlabeled_ratio >= 0.0 && self.unlabeled_ratio.is_finite()) {
            return bad("unlabeled ratio must be non-negative");
        }
        if !(0.0..1.0).contains(&self.hidden_positive_fraction) {
            return bad("hidden positive fraction must be in [0, 1)");
        }
        if self.prior.mc_samples == 0 {
            return bad("prior mc_samples must be at least 1");
        }
        Ok(())
    }
}

/// Mixture fit summary for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorDiagnostic {
    pub elbo: Vec<f64>,
    pub mixture: MixtureParams,
    /// Positives better explained by component 1 and component 2.
    pub counts: [usize; 2],
    pub component: usize,
    pub pi: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean risk over the epoch's minibatches.
    pub loss: f64,
    /// Prior used during the epoch.
    pub pi: f64,
    pub prior: Option<PriorDiagnostic>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epochs that were restarted at half the learning rate.
    pub restarts: usize,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// Prior in effect at each epoch, followed by the final estimate.
    pub fn pi_hat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.epochs.iter().map(|e| e.pi).collect();
        if let Some(p) = self.epochs.last().and_then(|e| e.prior.as_ref()) {
            out.push(p.pi);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: History,
    pub posterior: Option<VariationalPosterior>,
}

/// Fixed-capacity uniform sample of a stream (Algorithm R).
struct Reservoir {
    items: Vec<Vec<f64>>,
    capacity: usize,
    seen: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl Reservoir {
    fn new(capacity: usize, seed: u64) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            seen: 0,
            rng: seed::rng(seed),
        }
    }

    fn push(&mut self, item: &[f64]) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item.to_vec());
        } else if self.capacity > 0 {
            let j = self.rng.random_range(0..self.seen);
            if j < self.capacity {
                self.items[j] = item.to_vec();
            }
        }
    }
}

/// Labelled pairs of one time step, fixed for the whole run.
struct StepPairs {
    t: usize,
    positives: Vec<Pair>,
    hidden: Vec<Pair>,
    n_unlabeled: usize,
}

fn is_hidden(seed: u64, pair: Pair, fraction: f64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    let h = seed::derive(seed, &[HIDE, pair.lo() as u64, pair.hi() as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64 <= fraction
}

fn step_pairs(graph: &TemporalGraph, config: &TrainConfig) -> Result<Vec<StepPairs>, TrainError> {
    let mut out = Vec::new();
    for t in 1..=graph.len() {
        let built = build_training_pairs(graph, t, 0, 0)?;
        let (hidden, positives): (Vec<Pair>, Vec<Pair>) = built
            .positives
            .iter()
            .map(|s| s.pair)
            .partition(|&p| is_hidden(config.seed, p, config.hidden_positive_fraction));
        let n_unlabeled = (config.unlabeled_ratio * (positives.len() + hidden.len()) as f64).round() as usize;
        out.push(StepPairs {
            t,
            positives,
            hidden,
            n_unlabeled,
        });
    }
    Ok(out)
}

/// Risk value, parameter gradients and detached embeddings of one batch.
struct BatchResult {
    loss: f64,
    grads: Vec<Tensor>,
    embeddings: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn batch_gradient(
    params: &ModelParams,
    model: &ModelConfig,
    graph: &TemporalGraph,
    positives: &[Pair],
    unlabeled: &[Pair],
    t: usize,
    step_seed: u64,
    estimator: Estimator,
    pi: f64,
    workers: &Workers,
) -> Result<BatchResult, TrainError> {
    let pairs: Vec<Pair> = positives.iter().chain(unlabeled).copied().collect();
    let chunks: Vec<&[Pair]> = pairs.chunks(TRAIN_CHUNK).collect();
    let forwards = workers.map(&chunks, |chunk| {
        let mut tape = Tape::new();
        let vars = params.map(|_, p| tape.param(p.clone()));
        let out = forward_batch(&mut tape, &vars, model, graph, chunk, t, step_seed, true)?;
        Ok::<_, ModelError>((tape, vars, out))
    });
    let forwards: Vec<(Tape, Params<Var>, _)> = forwards.into_iter().collect::<Result<_, _>>()?;

    let mut scores = Vec::with_capacity(pairs.len());
    let mut embeddings = Vec::with_capacity(pairs.len());
    for (tape, _, out) in &forwards {
        scores.extend_from_slice(tape.value(out.scores).data());
        let e = tape.value(out.embeddings);
        embeddings.extend((0..e.rows()).map(|r| e.row_slice(r).to_vec()));
    }

    let np = positives.len();
    let pi = if estimator == Estimator::Pn {
        np as f64 / pairs.len() as f64
    } else {
        pi
    };
    let mut loss_tape = Tape::new();
    let ps = loss_tape.param(Tensor::new(vec![np, 1], scores[..np].to_vec()).map_err(non_finite)?);
    let us = loss_tape.param(Tensor::new(vec![pairs.len() - np, 1], scores[np..].to_vec()).map_err(non_finite)?);
    let risk = risk_on_tape(&mut loss_tape, estimator, ps, us, pi);
    let loss = loss_tape.value(risk).item();
    let g = loss_tape.grad(risk).expect("scalar risk");
    let d_scores: Vec<f64> = g.get(ps).data().iter().chain(g.get(us).data()).copied().collect();

    let items: Vec<(usize, &(Tape, Params<Var>, _))> = forwards
        .iter()
        .scan(0, |offset, f| {
            let start = *offset;
            *offset += f.0.value(f.2.scores).rows();
            Some((start, f))
        })
        .collect();
    let partial = workers.map(&items, |&(start, (tape, vars, out))| {
        let rows = tape.value(out.scores).rows();
        let seed = Tensor::new(vec![rows, 1], d_scores[start..start + rows].to_vec()).expect("finite gradient");
        let grads = tape.backward_with_seed(out.scores, seed);
        vars.iter().map(|&v| grads.get(v)).collect::<Vec<Tensor>>()
    });
    let mut total: Vec<Tensor> = Vec::new();
    for chunk in partial {
        if total.is_empty() {
            total = chunk;
        } else {
            for (acc, g) in total.iter_mut().zip(&chunk) {
                *acc = acc.zip_map(g, |a, b| a + b);
            }
        }
    }
    Ok(BatchResult {
        loss,
        grads: total,
        embeddings,
    })
}

fn non_finite(_: trp_autodiff::AutodiffError) -> TrainError {
    TrainError::Diverged {
        epoch: 0,
        lr: 0.0,
        reason: "non-finite score".into(),
        norms: Vec::new(),
    }
}

/// Splits `n` items into `k` contiguous near-equal ranges.
fn bounds(n: usize, k: usize, b: usize) -> std::ops::Range<usize> {
    (b * n / k)..((b + 1) * n / k)
}

enum EpochFailure {
    Numerical(String),
    Other(TrainError),
}

struct EpochState<'a> {
    graph: &'a TemporalGraph,
    model: &'a ModelConfig,
    config: &'a TrainConfig,
    workers: &'a Workers,
    steps: &'a [StepPairs],
}

struct EpochOutput {
    loss: f64,
    all: Reservoir,
    positives: Reservoir,
}

fn run_epoch(
    s: &EpochState<'_>,
    epoch: usize,
    params: &mut Vec<Tensor>,
    adam: &mut Adam,
    pi: f64,
) -> Result<EpochOutput, EpochFailure> {
    let cfg = s.config;
    let mut all = Reservoir::new(cfg.prior.reservoir, seed::derive(cfg.seed, &[RESERVOIR, epoch as u64, 0]));
    let mut pos_res = Reservoir::new(cfg.prior.reservoir, seed::derive(cfg.seed, &[RESERVOIR, epoch as u64, 1]));
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for sp in s.steps {
        let e = epoch as u64;
        let t = sp.t as u64;
        let label_window = s.graph.window((sp.t + 1).min(s.graph.len()));
        let (mut unlabeled, _) = sample_non_edges(label_window, sp.n_unlabeled, seed::derive(cfg.seed, &[UNLABELED, e, t]));
        unlabeled.extend_from_slice(&sp.hidden);
        let mut positives = sp.positives.clone();
        let mut rng = seed::rng(seed::derive(cfg.seed, &[SHUFFLE, e, t]));
        positives.shuffle(&mut rng);
        unlabeled.shuffle(&mut rng);
        if positives.is_empty() || unlabeled.is_empty() {
            log::debug!("epoch {epoch}, step {t}: skipped (positives {}, unlabeled {})", positives.len(), unlabeled.len());
            continue;
        }
        let n_batches = positives
            .len()
            .div_ceil(cfg.batch_positive)
            .max(unlabeled.len().div_ceil(cfg.batch_unlabeled))
            .min(positives.len())
            .min(unlabeled.len());
        for b in 0..n_batches {
            let pos_b = &positives[bounds(positives.len(), n_batches, b)];
            let unl_b = &unlabeled[bounds(unlabeled.len(), n_batches, b)];
            let current = ModelParams::from_vec(s.model, params.clone()).map_err(|e| EpochFailure::Other(e.into()))?;
            let step_seed = seed::derive(cfg.seed, &[STEP, e, t, b as u64]);
            let r = match batch_gradient(&current, s.model, s.graph, pos_b, unl_b, sp.t, step_seed, cfg.estimator, pi, s.workers) {
                Ok(r) => r,
                Err(TrainError::Diverged { reason, .. }) => return Err(EpochFailure::Numerical(reason)),
                Err(other) => return Err(EpochFailure::Other(other)),
            };
            if !r.loss.is_finite() || r.grads.iter().any(|g| !g.is_finite()) {
                return Err(EpochFailure::Numerical(format!("non-finite loss or gradient at step {t}, batch {b}")));
            }
            adam.step(params, &r.grads)
                .map_err(|e| EpochFailure::Numerical(e.to_string()))?;
            let worst = params
                .iter()
                .flat_map(|p| p.data().iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if !(worst <= cfg.max_param_abs) {
                return Err(EpochFailure::Numerical(format!(
                    "parameter magnitude {worst:e} exceeds {:e}",
                    cfg.max_param_abs
                )));
            }
            for (i, h) in r.embeddings.iter().enumerate() {
                all.push(h);
                if i < pos_b.len() {
                    pos_res.push(h);
                }
            }
            loss_sum += r.loss;
            batches += 1;
        }
    }
    Ok(EpochOutput {
        loss: if batches == 0 { 0.0 } else { loss_sum / batches as f64 },
        all,
        positives: pos_res,
    })
}

/// Trains all networks on every time step of `graph`.
///
/// Step `t` uses windows `1..=t` as input and the edges of window
/// `min(t + 1, T)` as positives, so the final step repeats the labels of
/// the one before it.
pub fn train(
    graph: &TemporalGraph,
    model: &ModelConfig,
    config: &TrainConfig,
    workers: &Workers,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    if graph.is_empty() {
        return Err(TrainError::Config("graph has no windows".into()));
    }
    if graph.feature_dim() != model.feature_dim {
        return Err(ModelError::FeatureDim {
            graph: graph.feature_dim(),
            model: model.feature_dim,
        }
        .into());
    }
    let steps = step_pairs(graph, config)?;
    let (n_pos, n_unl) = steps.iter().fold((0, 0), |(p, u), s| {
        (p + s.positives.len(), u + s.n_unlabeled + s.hidden.len())
    });
    let initial = ModelParams::init(model, seed::derive(config.seed, &[INIT]));
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            params: initial,
            history,
            posterior: None,
        });
    }
    if n_pos == 0 || n_unl == 0 {
        return Err(TrainError::NoTrainingPairs);
    }

    let mut params = initial.to_vec();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &params);
    let mut pi = n_pos as f64 / (n_pos + n_unl) as f64;
    let mut posterior: Option<VariationalPosterior> = None;
    let state = EpochState {
        graph,
        model,
        config,
        workers,
        steps: &steps,
    };

    for epoch in 0..config.epochs {
        let saved = (params.clone(), adam.clone());
        let mut attempt = 0;
        let out = loop {
            match run_epoch(&state, epoch, &mut params, &mut adam, pi) {
                Ok(out) => break out,
                Err(EpochFailure::Other(e)) => return Err(e),
                Err(EpochFailure::Numerical(reason)) => {
                    let lr = adam.config().lr;
                    if attempt == 1 {
                        let norms = ModelParams::from_vec(model, saved.0.clone())
                            .map(|p| p.norms())
                            .unwrap_or_default();
                        return Err(TrainError::Diverged {
                            epoch,
                            lr,
                            reason,
                            norms,
                        });
                    }
                    log::warn!("epoch {epoch}: {reason}; restarting at learning rate {}", lr / 2.0);
                    params = saved.0.clone();
                    adam = saved.1.clone();
                    adam.set_lr(lr / 2.0);
                    history.restarts += 1;
                    attempt += 1;
                }
            }
        };

        let mut record = EpochRecord {
            epoch,
            lr: adam.config().lr,
            loss: out.loss,
            pi,
            prior: None,
        };
        let due = config.prior_cadence > 0 && (epoch + 1) % config.prior_cadence == 0;
        if due && !out.all.items.is_empty() && !out.positives.items.is_empty() {
            let fit_cfg = FitConfig {
                steps: config.prior.steps,
                lr: config.prior.lr,
                mc_samples: config.prior.mc_samples,
                seed: seed::derive(config.seed, &[PRIOR, epoch as u64]),
            };
            let fit = fit_mixture(&out.all.items, &fit_cfg, posterior.clone()).map_err(|e| TrainError::Config(e.to_string()))?;
            let est = estimate_prior(&fit.posterior, &out.positives.items).map_err(|e| TrainError::Config(e.to_string()))?;
            if fit.diverged || !fit.posterior.is_finite() {
                log::warn!("epoch {epoch}: mixture fit diverged; keeping prior {pi}");
            } else {
                pi = est.pi;
                posterior = Some(fit.posterior.clone());
            }
            log::info!("epoch {epoch}: loss {:.6}, prior {:.4} (components {:?})", out.loss, pi, est.counts);
            record.prior = Some(PriorDiagnostic {
                elbo: fit.trajectory,
                mixture: fit.posterior.mean_mixture(),
                counts: est.counts,
                component: est.component,
                pi: est.pi,
                diverged: fit.diverged,
            });
        } else {
            log::info!("epoch {epoch}: loss {:.6}, prior {pi:.4}", out.loss);
        }
        history.epochs.push(record);
    }
    Ok(TrainOutcome {
        params: ModelParams::from_vec(model, params)?,
        history,
        posterior,
    })
}

/// The coupled objective `Σ_t L^R_t + L^E_t`, with the mixture loss
/// differentiated through the pair embeddings as well. Training proper
/// detaches the embeddings from `L^E`; this form exists for gradient
/// verification.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss_on_tape(
    tape: &mut Tape,
    params: &Params<Var>,
    theta: &Posterior<Var>,
    model: &ModelConfig,
    graph: &TemporalGraph,
    estimator: Estimator,
    pi: f64,
    n_unlabeled: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<Var, TrainError> {
    let mut total: Option<Var> = None;
    for t in 1..=graph.len() {
        let pairs = build_training_pairs(graph, t, n_unlabeled, seed::derive(seed, &[UNLABELED, t as u64]))?;
        if pairs.positives.is_empty() || pairs.unlabeled.is_empty() {
            continue;
        }
        let list: Vec<Pair> = pairs.positives.iter().chain(&pairs.unlabeled).map(|s| s.pair).collect();
        let np = pairs.positives.len();
        let out = forward_batch(tape, params, model, graph, &list, t, seed::derive(seed, &[STEP, t as u64]), true)?;
        let pos_idx: Vec<usize> = (0..np).collect();
        let unl_idx: Vec<usize> = (np..list.len()).collect();
        let ps = tape.gather_rows(out.scores, &pos_idx);
        let us = tape.gather_rows(out.scores, &unl_idx);
        let risk = risk_on_tape(tape, estimator, ps, us, pi);
        let le = elbo_on_tape(tape, theta, Some(out.embeddings), mc_samples, seed::derive(seed, &[PRIOR, t as u64]));
        let step = tape.add(risk, le);
        total = Some(match total {
            None => step,
            Some(acc) => tape.add(acc, step),
        });
    }
    total.ok_or(TrainError::NoTrainingPairs)
}
