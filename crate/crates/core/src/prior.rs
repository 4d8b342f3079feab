//! Class-prior estimation by variational inference over a two-component
//! diagonal Gaussian mixture fitted to pair embeddings.
//!
//! Every mixture parameter has an unconstrained Gaussian posterior: means
//! directly, variances through `exp`, mixing weights through a softmax of
//! logits. All priors are standard normal on the unconstrained values.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use trp_autodiff::{Adam, AdamConfig, Tape, Tensor, Var};

use crate::seed;

/// Smallest posterior scale; smaller values are clamped.
pub const SCALE_FLOOR: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Monte Carlo draws used for the posterior mean of the mixing weights.
const MIXING_DRAWS: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("no positive embeddings")]
    NoPositives,
    #[error("non-finite embedding")]
    NonFinite,
    #[error("mc_samples must be at least 1")]
    NoSamples,
}

/// Gaussian posterior over one component's unconstrained parameters.
/// `*_rho` are log scales.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentPosterior<T> {
    pub mean_loc: T,
    pub mean_rho: T,
    pub logvar_loc: T,
    pub logvar_rho: T,
    pub logit_loc: T,
    pub logit_rho: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<T> {
    pub components: [ComponentPosterior<T>; 2],
}

pub type VariationalPosterior = Posterior<Tensor>;

impl<T> Posterior<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Posterior<U> {
        let mut one = |c: &ComponentPosterior<T>| ComponentPosterior {
            mean_loc: f(&c.mean_loc),
            mean_rho: f(&c.mean_rho),
            logvar_loc: f(&c.logvar_loc),
            logvar_rho: f(&c.logvar_rho),
            logit_loc: f(&c.logit_loc),
            logit_rho: f(&c.logit_rho),
        };
        let a = one(&self.components[0]);
        let b = one(&self.components[1]);
        Posterior { components: [a, b] }
    }

    fn refs(&self) -> Vec<&T> {
        self.components
            .iter()
            .flat_map(|c| [&c.mean_loc, &c.mean_rho, &c.logvar_loc, &c.logvar_rho, &c.logit_loc, &c.logit_rho])
            .collect()
    }

    /// The same posterior with the two components exchanged.
    pub fn swapped(&self) -> Self
    where
        T: Clone,
    {
        Posterior {
            components: [self.components[1].clone(), self.components[0].clone()],
        }
    }
}

impl VariationalPosterior {
    /// The prior itself: zero locations, unit scales.
    pub fn standard(dim: usize) -> Self {
        let c = || ComponentPosterior {
            mean_loc: Tensor::zeros(&[1, dim]),
            mean_rho: Tensor::zeros(&[1, dim]),
            logvar_loc: Tensor::zeros(&[1, dim]),
            logvar_rho: Tensor::zeros(&[1, dim]),
            logit_loc: Tensor::zeros(&[1, 1]),
            logit_rho: Tensor::zeros(&[1, 1]),
        };
        Posterior {
            components: [c(), c()],
        }
    }

    /// Data-driven starting point: component 1 at the data mean, component
    /// 2 at the datum farthest from it, both with the data variance and
    /// equal mixing logits.
    pub fn initial(data: &[Vec<f64>]) -> Self {
        assert!(!data.is_empty(), "initialisation needs data");
        let d = data[0].len();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|h| h[j]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..d)
            .map(|j| (data.iter().map(|h| (h[j] - mean[j]).powi(2)).sum::<f64>() / n).max(1e-8))
            .collect();
        let far = data
            .iter()
            .max_by(|a, b| {
                let da: f64 = a.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum();
                let db: f64 = b.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum();
                da.total_cmp(&db)
            })
            .expect("non-empty");
        let row = |v: Vec<f64>| Tensor::row(v).expect("finite");
        let logvar: Vec<f64> = var.iter().map(|v| v.ln()).collect();
        let rho = 0.05f64.ln();
        let c = |loc: &[f64]| ComponentPosterior {
            mean_loc: row(loc.to_vec()),
            mean_rho: Tensor::full(&[1, d], rho),
            logvar_loc: row(logvar.clone()),
            logvar_rho: Tensor::full(&[1, d], rho),
            logit_loc: Tensor::zeros(&[1, 1]),
            logit_rho: Tensor::full(&[1, 1], rho),
        };
        Posterior {
            components: [c(&mean), c(far)],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean_loc.len()
    }

    pub fn to_vec(&self) -> Vec<Tensor> {
        self.refs().into_iter().cloned().collect()
    }

    pub fn from_vec(tensors: Vec<Tensor>) -> Self {
        assert_eq!(tensors.len(), 12, "posterior has 12 tensors");
        let mut it = tensors.into_iter();
        let mut c = || ComponentPosterior {
            mean_loc: it.next().unwrap(),
            mean_rho: it.next().unwrap(),
            logvar_loc: it.next().unwrap(),
            logvar_rho: it.next().unwrap(),
            logit_loc: it.next().unwrap(),
            logit_rho: it.next().unwrap(),
        };
        let a = c();
        let b = c();
        Posterior { components: [a, b] }
    }

    pub fn is_finite(&self) -> bool {
        self.refs().iter().all(|t| t.is_finite())
    }

    /// Posterior means of the mixture parameters.
    pub fn mean_mixture(&self) -> MixtureParams {
        let components = self.components.each_ref().map(|c| {
            let var = c
                .logvar_loc
                .data()
                .iter()
                .zip(c.logvar_rho.data())
                .map(|(&m, &r)| {
                    let s = r.exp().max(SCALE_FLOOR);
                    (m + 0.5 * s * s).exp()
                })
                .collect();
            (c.mean_loc.data().to_vec(), var)
        });
        let [(m1, v1), (m2, v2)] = components;
        MixtureParams {
            means: [m1, m2],
            variances: [v1, v2],
            weights: self.mean_mixing(),
        }
    }

    /// Monte Carlo posterior mean of the mixing weights (fixed seed).
    pub fn mean_mixing(&self) -> [f64; 2] {
        let loc = self.components.each_ref().map(|c| c.logit_loc.item());
        let scale = self.components.each_ref().map(|c| c.logit_rho.item().exp().max(SCALE_FLOOR));
        let mut rng = seed::rng(0x6d69_7869_6e67);
        let mut acc = 0.0;
        for _ in 0..MIXING_DRAWS {
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            let diff = (loc[0] + scale[0] * e0) - (loc[1] + scale[1] * e1);
            acc += logistic(diff);
        }
        let w0 = acc / MIXING_DRAWS as f64;
        [w0, 1.0 - w0]
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Point values of the mixture `β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub weights: [f64; 2],
}

/// Log density of `h` under a diagonal Gaussian.
pub fn component_log_likelihood(h: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64, PriorError> {
    if h.len() != mean.len() || h.len() != variance.len() {
        return Err(PriorError::Dimension(h.len(), mean.len().min(variance.len())));
    }
    let mut acc = 0.0;
    for ((&x, &m), &v) in h.iter().zip(mean).zip(variance) {
        if !(v > 0.0) {
            return Err(PriorError::NonPositiveVariance(v));
        }
        acc += LN_2PI + v.ln() + (x - m) * (x - m) / v;
    }
    Ok(-0.5 * acc)
}

/// Density of `h` under a diagonal Gaussian.
pub fn component_likelihood(h: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64, PriorError> {
    component_log_likelihood(h, mean, variance).map(f64::exp)
}

/// Floored scale `max(exp(rho), SCALE_FLOOR)` on the tape.
fn scale_of(tape: &mut Tape, rho: Var) -> Var {
    let s = tape.exp(rho);
    let shape = tape.shape(rho).to_vec();
    if tape.value(s).data().iter().any(|&v| v < SCALE_FLOOR) {
        log::warn!("variational scale below {SCALE_FLOOR:e}; clamped");
    }
    let floor = tape.constant(Tensor::full(&shape, SCALE_FLOOR));
    tape.maximum(s, floor)
}

/// `KL(N(loc, s²) ‖ N(0, 1))` summed over coordinates.
fn kl_standard(tape: &mut Tape, loc: Var, scale: Var) -> Var {
    let ls = tape.log(scale);
    let nls = tape.neg(ls);
    let s2 = tape.mul(scale, scale);
    let m2 = tape.mul(loc, loc);
    let q = tape.add(s2, m2);
    let q = tape.scale(q, 0.5);
    let t = tape.add(nls, q);
    let t = tape.add_scalar(t, -0.5);
    tape.sum(t)
}

/// Numerically stable `log(e^a + e^b)` for equal-shaped tensors.
fn log_add_exp(tape: &mut Tape, a: Var, b: Var) -> Var {
    let m = tape.maximum(a, b);
    let da = tape.sub(a, m);
    let db = tape.sub(b, m);
    let ea = tape.exp(da);
    let eb = tape.exp(db);
    let s = tape.add(ea, eb);
    let l = tape.log(s);
    tape.add(m, l)
}

fn normal(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Negative evidence lower bound `KL(q ‖ p) − E_q[log p(H | β)]`.
///
/// `data` is an `[n, d]` matrix of embeddings (or `None` for an empty set).
/// The expectation uses `mc_samples` reparameterised draws whose noise is a
/// pure function of `seed`, so repeated evaluations share random numbers.
pub fn elbo_on_tape(tape: &mut Tape, theta: &Posterior<Var>, data: Option<Var>, mc_samples: usize, seed: u64) -> Var {
    assert!(mc_samples >= 1, "mc_samples must be at least 1");
    let d = tape.shape(theta.components[0].mean_loc)[1];
    let mut scales = Vec::with_capacity(2);
    let mut kl_terms = Vec::new();
    for c in &theta.components {
        let sm = scale_of(tape, c.mean_rho);
        let sv = scale_of(tape, c.logvar_rho);
        let sl = scale_of(tape, c.logit_rho);
        kl_terms.push(kl_standard(tape, c.mean_loc, sm));
        kl_terms.push(kl_standard(tape, c.logvar_loc, sv));
        kl_terms.push(kl_standard(tape, c.logit_loc, sl));
        scales.push((sm, sv, sl));
    }
    let mut kl = kl_terms[0];
    for &k in &kl_terms[1..] {
        kl = tape.add(kl, k);
    }
    let Some(h) = data else {
        return kl;
    };
    let n = tape.shape(h)[0];

    let mut rng = seed::rng(seed);
    let mut total: Option<Var> = None;
    for _ in 0..mc_samples {
        let mut comp_terms = Vec::with_capacity(2);
        let mut logits = Vec::with_capacity(2);
        for (c, &(sm, sv, sl)) in theta.components.iter().zip(&scales) {
            let em = tape.constant(Tensor::new(vec![1, d], normal(&mut rng, d)).expect("finite noise"));
            let ev = tape.constant(Tensor::new(vec![1, d], normal(&mut rng, d)).expect("finite noise"));
            let el = tape.constant(Tensor::new(vec![1, 1], normal(&mut rng, 1)).expect("finite noise"));
            let nm = tape.mul(sm, em);
            let mu = tape.add(c.mean_loc, nm);
            let nv = tape.mul(sv, ev);
            let logvar = tape.add(c.logvar_loc, nv);
            let nl = tape.mul(sl, el);
            logits.push(tape.add(c.logit_loc, nl));

            let mu_b = tape.broadcast(mu, n, d);
            let diff = tape.sub(h, mu_b);
            let sq = tape.mul(diff, diff);
            let neg_lv = tape.neg(logvar);
            let prec = tape.exp(neg_lv);
            let prec_b = tape.broadcast(prec, n, d);
            let w = tape.mul(sq, prec_b);
            let quad = tape.row_sum(w);
            let lv_sum = tape.sum(logvar);
            let norm = tape.add_scalar(lv_sum, d as f64 * LN_2PI);
            let norm_b = tape.broadcast(norm, n, 1);
            let inner = tape.add(quad, norm_b);
            comp_terms.push(tape.scale(inner, -0.5));
        }
        let lse_logits = log_add_exp(tape, logits[0], logits[1]);
        let mut weighted = Vec::with_capacity(2);
        for (k, term) in comp_terms.into_iter().enumerate() {
            let log_pi = tape.sub(logits[k], lse_logits);
            let log_pi_b = tape.broadcast(log_pi, n, 1);
            weighted.push(tape.add(term, log_pi_b));
        }
        let per_point = log_add_exp(tape, weighted[0], weighted[1]);
        let ll = tape.sum(per_point);
        total = Some(match total {
            None => ll,
            Some(acc) => tape.add(acc, ll),
        });
    }
    let expected = tape.scale(total.expect("at least one sample"), 1.0 / mc_samples as f64);
    tape.sub(kl, expected)
}

fn data_tensor(data: &[Vec<f64>]) -> Result<Option<Tensor>, PriorError> {
    if data.is_empty() {
        return Ok(None);
    }
    let d = data[0].len();
    let mut flat = Vec::with_capacity(data.len() * d);
    for h in data {
        if h.len() != d {
            return Err(PriorError::Dimension(h.len(), d));
        }
        flat.extend_from_slice(h);
    }
    Tensor::new(vec![data.len(), d], flat)
        .map(Some)
        .map_err(|_| PriorError::NonFinite)
}

/// Value of the loss for a concrete posterior.
pub fn elbo(theta: &VariationalPosterior, data: &[Vec<f64>], mc_samples: usize, seed: u64) -> Result<f64, PriorError> {
    if mc_samples == 0 {
        return Err(PriorError::NoSamples);
    }
    let h = data_tensor(data)?;
    if let Some(t) = &h {
        if t.cols() != theta.dim() {
            return Err(PriorError::Dimension(t.cols(), theta.dim()));
        }
    }
    let mut tape = Tape::new();
    let vars = theta.map(|t| tape.constant(t.clone()));
    let hv = h.map(|t| tape.constant(t));
    let l = elbo_on_tape(&mut tape, &vars, hv, mc_samples, seed);
    Ok(tape.value(l).item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            mc_samples: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub posterior: VariationalPosterior,
    /// Loss after each step.
    pub trajectory: Vec<f64>,
    /// Set when a step produced a non-finite loss; `posterior` is then the
    /// last finite state.
    pub diverged: bool,
}

/// Minimises the loss with Adam, starting from `init` (or the data-driven
/// initial posterior).
pub fn fit_mixture(
    data: &[Vec<f64>],
    config: &FitConfig,
    init: Option<VariationalPosterior>,
) -> Result<FitResult, PriorError> {
    if config.mc_samples == 0 {
        return Err(PriorError::NoSamples);
    }
    let h = data_tensor(data)?;
    let d = h.as_ref().map(|t| t.cols()).or(init.as_ref().map(|p| p.dim())).unwrap_or(1);
    if data.len() < 2 * d {
        log::debug!("fitting a {d}-dimensional mixture to only {} embeddings", data.len());
    }
    let mut theta = match init {
        Some(p) => {
            if p.dim() != d {
                return Err(PriorError::Dimension(p.dim(), d));
            }
            p
        }
        None if data.is_empty() => VariationalPosterior::standard(d),
        None => VariationalPosterior::initial(data),
    };
    let mut params = theta.to_vec();
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &params);
    let mut trajectory = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut tape = Tape::new();
        let vars = VariationalPosterior::from_vec(params.clone()).map(|t| tape.param(t.clone()));
        let hv = h.clone().map(|t| tape.constant(t));
        let loss = elbo_on_tape(&mut tape, &vars, hv, config.mc_samples, seed::derive(config.seed, &[step as u64]));
        let value = tape.value(loss).item();
        if !value.is_finite() {
            log::warn!("mixture fit diverged at step {step}");
            return Ok(FitResult {
                posterior: theta,
                trajectory,
                diverged: true,
            });
        }
        let grads = tape.grad(loss).expect("scalar loss");
        let g: Vec<Tensor> = vars.refs().into_iter().map(|&v| grads.get(v)).collect();
        if g.iter().any(|t| !t.is_finite()) || adam.step(&mut params, &g).is_err() {
            log::warn!("mixture fit produced a non-finite gradient at step {step}");
            return Ok(FitResult {
                posterior: theta,
                trajectory,
                diverged: true,
            });
        }
        theta = VariationalPosterior::from_vec(params.clone());
        trajectory.push(value);
    }
    Ok(FitResult {
        posterior: theta,
        trajectory,
        diverged: false,
    })
}

/// Outcome of prior extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub pi: f64,
    /// Zero-based index of the component identified as positive.
    pub component: usize,
    /// Positives better explained by component 1 and component 2.
    pub counts: [usize; 2],
    pub weights: [f64; 2],
}

/// Assigns each positive embedding to the component with the larger
/// posterior-mean density and returns the mixing weight of the component
/// holding most positives (component 1 on ties).
pub fn estimate_prior(theta: &VariationalPosterior, positives: &[Vec<f64>]) -> Result<PriorEstimate, PriorError> {
    if positives.is_empty() {
        return Err(PriorError::NoPositives);
    }
    let mix = theta.mean_mixture();
    let mut counts = [0usize; 2];
    for h in positives {
        let l0 = component_log_likelihood(h, &mix.means[0], &mix.variances[0])?;
        let l1 = component_log_likelihood(h, &mix.means[1], &mix.variances[1])?;
        counts[if l0 > l1 { 0 } else { 1 }] += 1;
    }
    let component = if counts[0] >= counts[1] { 0 } else { 1 };
    Ok(PriorEstimate {
        pi: mix.weights[component].clamp(0.0, 1.0),
        component,
        counts,
        weights: mix.weights,
    })
}
