use rand::Rng;
use trp_autodiff::Tensor;

use super::{AggregatorKind, ModelConfig, ModelError};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Pool<T> {
    pub weight: T,
    pub bias: T,
}

/// One aggregation layer: `[self ‖ neighbours] · weight + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggLayer<T> {
    pub weight: T,
    pub bias: T,
    /// Present for the max-pool aggregator only.
    pub pool: Option<Pool<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub w_update: T,
    pub u_update: T,
    pub b_update: T,
    pub w_reset: T,
    pub u_reset: T,
    pub b_reset: T,
    pub w_cand: T,
    pub u_cand: T,
    pub b_cand: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams<T> {
    pub weight: T,
    pub bias: T,
}

/// All trainable parameters, generic over concrete tensors and tape handles.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub aggregator: Vec<AggLayer<T>>,
    pub gru: GruParams<T>,
    pub classifier: ClassifierParams<T>,
}

pub type ModelParams = Params<Tensor>;

impl<T> Params<T> {
    /// Applies `f` to every parameter in canonical order, passing its name.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        let aggregator = self
            .aggregator
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let m = i + 1;
                AggLayer {
                    weight: f(&format!("agg.{m}.weight"), &l.weight),
                    bias: f(&format!("agg.{m}.bias"), &l.bias),
                    pool: l.pool.as_ref().map(|p| Pool {
                        weight: f(&format!("agg.{m}.pool_weight"), &p.weight),
                        bias: f(&format!("agg.{m}.pool_bias"), &p.bias),
                    }),
                }
            })
            .collect();
        let g = &self.gru;
        let gru = GruParams {
            w_update: f("gru.w_update", &g.w_update),
            u_update: f("gru.u_update", &g.u_update),
            b_update: f("gru.b_update", &g.b_update),
            w_reset: f("gru.w_reset", &g.w_reset),
            u_reset: f("gru.u_reset", &g.u_reset),
            b_reset: f("gru.b_reset", &g.b_reset),
            w_cand: f("gru.w_cand", &g.w_cand),
            u_cand: f("gru.u_cand", &g.u_cand),
            b_cand: f("gru.b_cand", &g.b_cand),
        };
        let classifier = ClassifierParams {
            weight: f("cls.weight", &self.classifier.weight),
            bias: f("cls.bias", &self.classifier.bias),
        };
        Params {
            aggregator,
            gru,
            classifier,
        }
    }

    /// `(name, parameter)` in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let names = self.map(|name, _| name.to_string());
        names.refs().into_iter().cloned().zip(self.refs()).collect()
    }

    fn refs(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for l in &self.aggregator {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(p) = &l.pool {
                out.push(&p.weight);
                out.push(&p.bias);
            }
        }
        let g = &self.gru;
        out.extend([
            &g.w_update, &g.u_update, &g.b_update, &g.w_reset, &g.u_reset, &g.b_reset, &g.w_cand, &g.u_cand,
            &g.b_cand,
        ]);
        out.extend([&self.classifier.weight, &self.classifier.bias]);
        out
    }

    pub fn len(&self) -> usize {
        self.refs().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.refs().into_iter()
    }
}

/// `(name, shape)` of every parameter for `config`, in canonical order.
fn shapes(config: &ModelConfig) -> Params<Vec<usize>> {
    let (f, d) = (config.feature_dim, config.dim);
    let aggregator = (0..config.depth())
        .map(|i| {
            let input = if i == 0 { f } else { d };
            AggLayer {
                weight: vec![2 * input, d],
                bias: vec![1, d],
                pool: (config.aggregator == AggregatorKind::MaxPool).then(|| Pool {
                    weight: vec![input, input],
                    bias: vec![1, input],
                }),
            }
        })
        .collect();
    let gru = GruParams {
        w_update: vec![d, d],
        u_update: vec![d, d],
        b_update: vec![1, d],
        w_reset: vec![d, d],
        u_reset: vec![d, d],
        b_reset: vec![1, d],
        w_cand: vec![d, d],
        u_cand: vec![d, d],
        b_cand: vec![1, d],
    };
    Params {
        aggregator,
        gru,
        classifier: ClassifierParams {
            weight: vec![d, 1],
            bias: vec![1, 1],
        },
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        shapes(config).map(|name, shape| {
            if name.ends_with("bias") || name.starts_with("gru.b_") {
                Tensor::zeros(shape)
            } else {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(shape.clone(), data).expect("finite initial values")
            }
        })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        shapes(config).map(|_, shape| Tensor::zeros(shape))
    }

    /// Parameters in canonical order, as taken by the optimiser.
    pub fn to_vec(&self) -> Vec<Tensor> {
        self.iter().cloned().collect()
    }

    /// Inverse of [`ModelParams::to_vec`].
    pub fn from_vec(config: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let mut it = tensors.into_iter();
        Self::from_lookup(config, |_| it.next())
    }

    /// Builds parameters by name, checking every shape.
    pub fn from_lookup(
        config: &ModelConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<Self, ModelError> {
        let mut error = None;
        let out = shapes(config).map(|name, shape| {
            let found = lookup(name);
            match found {
                Some(t) if t.shape() == shape.as_slice() => t,
                Some(t) => {
                    error.get_or_insert(ModelError::Parameter {
                        name: name.into(),
                        problem: format!("shape {:?}, expected {:?}", t.shape(), shape),
                    });
                    Tensor::zeros(shape)
                }
                None => {
                    error.get_or_insert(ModelError::Parameter {
                        name: name.into(),
                        problem: "missing".into(),
                    });
                    Tensor::zeros(shape)
                }
            }
        });
        match error {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.named().into_iter().map(|(n, t)| (n, t.norm())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(Tensor::is_finite)
    }
}
