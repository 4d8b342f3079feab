//! Sigmoid-loss classification risks: PN, unbiased PU and non-negative PU.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trp_autodiff::{Tape, Var};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("class prior {0} is outside [0, 1]")]
    PriorOutOfRange(f64),
    #[error("no positive scores")]
    NoPositives,
    #[error("no unlabeled scores")]
    NoUnlabeled,
    #[error("no negative scores")]
    NoNegatives,
    #[error("non-finite score")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Positive,
    Negative,
}

/// Risk estimator used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Unlabeled pairs treated as negatives.
    Pn,
    #[default]
    Upu,
    Nnpu,
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pn" => Ok(Self::Pn),
            "upu" => Ok(Self::Upu),
            "nnpu" => Ok(Self::Nnpu),
            other => Err(format!("unknown estimator `{other}` (expected pn, upu or nnpu)")),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pn => "PN",
            Self::Upu => "UPU",
            Self::Nnpu => "NNPU",
        })
    }
}

const TAIL: f64 = 36.0;

/// `l(p, +1) = 1 / (1 + e^p)` and `l(p, -1) = 1 / (1 + e^-p)`.
pub fn sigmoid_loss(score: f64, target: Target) -> f64 {
    let z = match target {
        Target::Positive => -score,
        Target::Negative => score,
    };
    // logistic(z)
    if z > TAIL {
        1.0
    } else if z < -TAIL {
        z.exp()
    } else if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_loss(scores: &[f64], target: Target) -> f64 {
    scores.iter().map(|&p| sigmoid_loss(p, target)).sum::<f64>() / scores.len() as f64
}

fn check(pi: f64, lists: &[(&[f64], RiskError)]) -> Result<(), RiskError> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(RiskError::PriorOutOfRange(pi));
    }
    for (list, err) in lists {
        if list.is_empty() {
            return Err(err.clone());
        }
        if list.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::NonFinite);
        }
    }
    Ok(())
}

/// `π·R⁺_P + (1 − π)·R⁻_N`.
pub fn pn_risk(positive: &[f64], negative: &[f64], pi: f64) -> Result<f64, RiskError> {
    check(pi, &[(positive, RiskError::NoPositives), (negative, RiskError::NoNegatives)])?;
    Ok(pi * mean_loss(positive, Target::Positive) + (1.0 - pi) * mean_loss(negative, Target::Negative))
}

fn pu_terms(positive: &[f64], unlabeled: &[f64], pi: f64) -> Result<(f64, f64), RiskError> {
    check(pi, &[(unlabeled, RiskError::NoUnlabeled)])?;
    if positive.is_empty() {
        if pi > 0.0 {
            return Err(RiskError::NoPositives);
        }
        return Ok((0.0, mean_loss(unlabeled, Target::Negative)));
    }
    check(pi, &[(positive, RiskError::NoPositives)])?;
    let pos = pi * mean_loss(positive, Target::Positive);
    let neg = mean_loss(unlabeled, Target::Negative) - pi * mean_loss(positive, Target::Negative);
    Ok((pos, neg))
}

/// `π·R⁺_P + R⁻_U − π·R⁻_P`; may be negative.
pub fn upu_risk(positive: &[f64], unlabeled: &[f64], pi: f64) -> Result<f64, RiskError> {
    let (pos, neg) = pu_terms(positive, unlabeled, pi)?;
    Ok(pos + neg)
}

/// `π·R⁺_P + max(0, R⁻_U − π·R⁻_P)`.
pub fn nnpu_risk(positive: &[f64], unlabeled: &[f64], pi: f64) -> Result<f64, RiskError> {
    let (pos, neg) = pu_terms(positive, unlabeled, pi)?;
    Ok(pos + neg.max(0.0))
}

/// Risk of `estimator`. In PN mode the unlabeled scores act as negatives.
pub fn risk(estimator: Estimator, positive: &[f64], unlabeled: &[f64], pi: f64) -> Result<f64, RiskError> {
    match estimator {
        Estimator::Pn => pn_risk(positive, unlabeled, pi),
        Estimator::Upu => upu_risk(positive, unlabeled, pi),
        Estimator::Nnpu => nnpu_risk(positive, unlabeled, pi),
    }
}

/// Mean sigmoid loss of a `[n, 1]` score column recorded on `tape`.
pub fn mean_loss_on_tape(tape: &mut Tape, scores: Var, target: Target) -> Var {
    let z = match target {
        Target::Positive => tape.neg(scores),
        Target::Negative => scores,
    };
    let l = tape.sigmoid(z);
    tape.mean(l)
}

/// Differentiable counterpart of [`risk`]. `positive` and `unlabeled` are
/// score columns; the prior is a constant.
pub fn risk_on_tape(tape: &mut Tape, estimator: Estimator, positive: Var, unlabeled: Var, pi: f64) -> Var {
    let pos_plus = mean_loss_on_tape(tape, positive, Target::Positive);
    let unl_minus = mean_loss_on_tape(tape, unlabeled, Target::Negative);
    match estimator {
        Estimator::Pn => {
            let a = tape.scale(pos_plus, pi);
            let b = tape.scale(unl_minus, 1.0 - pi);
            tape.add(a, b)
        }
        Estimator::Upu | Estimator::Nnpu => {
            let pos_minus = mean_loss_on_tape(tape, positive, Target::Negative);
            let a = tape.scale(pos_plus, pi);
            let c = tape.scale(pos_minus, pi);
            let neg = tape.sub(unl_minus, c);
            let neg = if estimator == Estimator::Nnpu { tape.relu(neg) } else { neg };
            tape.add(a, neg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trp_autodiff::Tensor;

    #[test]
    fn loss_values() {
        assert_eq!(sigmoid_loss(0.0, Target::Positive), 0.5);
        assert!((sigmoid_loss(10.0, Target::Positive) - 4.539_786_870_243_439e-5).abs() < 1e-15);
        for p in [-50.0, -36.5, -3.0, 0.2, 36.5, 700.0] {
            let s = sigmoid_loss(p, Target::Positive) + sigmoid_loss(p, Target::Negative);
            assert!((s - 1.0).abs() <= 1e-15, "{p}: {s}");
        }
    }

    #[test]
    fn hand_evaluated_risks() {
        assert_eq!(pn_risk(&[0.0], &[0.0], 0.5).unwrap(), 0.5);
        assert_eq!(upu_risk(&[0.0], &[0.0], 0.5).unwrap(), 0.5);
        assert_eq!(upu_risk(&[3.0], &[0.4, -1.0], 0.0).unwrap(), mean_loss(&[0.4, -1.0], Target::Negative));
        let r = pn_risk(&[10.0], &[-10.0], 0.5).unwrap();
        assert!((r - 4.539_786_870_243_439e-5).abs() < 1e-12);
        let nn = nnpu_risk(&[10.0], &[-10.0], 0.5).unwrap();
        assert!((nn - 0.5 * sigmoid_loss(10.0, Target::Positive)).abs() < 1e-15);
    }

    #[test]
    fn contract_violations() {
        assert_eq!(pn_risk(&[1.0], &[], 0.3), Err(RiskError::NoNegatives));
        assert_eq!(upu_risk(&[], &[1.0], 0.3), Err(RiskError::NoPositives));
        assert_eq!(upu_risk(&[1.0], &[1.0], 1.5), Err(RiskError::PriorOutOfRange(1.5)));
    }

    #[test]
    fn tape_matches_eager() {
        let pos = vec![0.3, -1.2, 2.0];
        let unl = vec![-0.5, 0.1, 1.7, -2.2];
        for est in [Estimator::Pn, Estimator::Upu, Estimator::Nnpu] {
            for pi in [0.0, 0.2, 0.9] {
                let mut tape = Tape::new();
                let p = tape.param(Tensor::matrix(3, 1, pos.clone()).unwrap());
                let u = tape.param(Tensor::matrix(4, 1, unl.clone()).unwrap());
                let r = risk_on_tape(&mut tape, est, p, u, pi);
                let eager = risk(est, &pos, &unl, pi).unwrap();
                assert!((tape.value(r).item() - eager).abs() < 1e-15);
            }
        }
    }
}
