//! Classification and ranking metrics over observed labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("predictions and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("no positive labels")]
    NoPositives,
}

/// Confusion counts with `true` meaning the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn new(predictions: &[bool], labels: &[bool]) -> Result<Self, MetricError> {
        if predictions.len() != labels.len() {
            return Err(MetricError::Length(predictions.len(), labels.len()));
        }
        if labels.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut c = Self::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 of the positive class; 0 when the class is absent from both
    /// predictions and labels.
    pub fn f1_positive(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    pub fn f1_negative(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }

    pub fn recall(&self) -> f64 {
        let p = self.tp + self.fn_;
        if p == 0 {
            0.0
        } else {
            self.tp as f64 / p as f64
        }
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// `(F1-S, F1-M)`: positive-class F1 and the unweighted mean of both
/// per-class F1 scores.
pub fn f1_scores(predictions: &[bool], labels: &[bool]) -> Result<(f64, f64), MetricError> {
    let c = Confusion::new(predictions, labels)?;
    let s = c.f1_positive();
    Ok((s, 0.5 * (s + c.f1_negative())))
}

/// PU criterion `recall² / Pr(prediction = +1)` over all evaluated pairs;
/// 0 when nothing is predicted positive. May exceed 1.
pub fn f1_pu(predictions: &[bool], observed: &[bool]) -> Result<f64, MetricError> {
    let c = Confusion::new(predictions, observed)?;
    if c.tp + c.fn_ == 0 {
        return Err(MetricError::NoPositives);
    }
    let predicted = c.tp + c.fp;
    if predicted == 0 {
        return Ok(0.0);
    }
    // One rounding: tp² · total / (positives² · predicted).
    let pos = (c.tp + c.fn_) as f64;
    Ok((c.tp * c.tp) as f64 * c.total() as f64 / (pos * pos * predicted as f64))
}

/// Label ranking average precision with ties resolved by the exact
/// expectation over orderings of each tied group.
///
/// For a positive in a tied group of size `g` holding `p` positives, with
/// `a` items and `a⁺` positives strictly above the group, the expected
/// precision at its rank is
/// `(1/g) Σ_{k=1..g} (a⁺ + 1 + (k − 1)(p − 1)/(g − 1)) / (a + k)`.
pub fn lrap(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut total = 0.0;
    let (mut above, mut above_pos) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let g = j - i;
        let p = order[i..j].iter().filter(|&&k| labels[k]).count();
        if p > 0 {
            let spread = if g > 1 { (p - 1) as f64 / (g - 1) as f64 } else { 0.0 };
            let expected: f64 = (1..=g)
                .map(|k| (above_pos as f64 + 1.0 + (k - 1) as f64 * spread) / (above + k) as f64)
                .sum::<f64>()
                / g as f64;
            total += p as f64 * expected;
        }
        above += g;
        above_pos += p;
        i = j;
    }
    Ok(total / n_pos as f64)
}
