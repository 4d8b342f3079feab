//! Adam optimiser with bias correction.

use crate::error::AutodiffError;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first and second moment accumulators.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Creates zeroed accumulators shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Shapes are validated before anything
    /// is modified.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(AutodiffError::CountMismatch {
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            for actual in [p.shape(), g.shape()] {
                if actual != m.shape() {
                    return Err(AutodiffError::ShapeMismatch {
                        index: i,
                        expected: m.shape().to_vec(),
                        actual: actual.to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![Tensor::row(vec![0.3, -1.2]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &params);
        adam.step(&mut params, &[Tensor::zeros(&[1, 2])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after one step, so the update is
        // lr * g / (|g| + eps).
        let lr = 0.01;
        let g = [0.5, -3.0, 1e-2];
        let mut params = vec![Tensor::row(vec![1.0, 1.0, 1.0]).unwrap()];
        let mut adam = Adam::new(AdamConfig::with_lr(lr), &params);
        adam.step(&mut params, &[Tensor::row(g.to_vec()).unwrap()]).unwrap();
        for (p, gv) in params[0].data().iter().zip(g) {
            let expected = 1.0 - lr * gv / (gv.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
            assert!(((1.0 - p).abs() - lr).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected_without_mutation() {
        let mut params = vec![Tensor::zeros(&[2, 2])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Tensor::zeros(&[4, 1])]);
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch { .. })));
        assert_eq!(adam.steps(), 0);
    }
}
