//! Truncated SVD features of a document-term matrix.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Above this many entries the randomized solver is used.
pub const EXACT_SVD_LIMIT: usize = 500 * 500;
pub const OVERSAMPLE: usize = 8;
pub const POWER_ITERATIONS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsiDiagnostic {
    pub requested: usize,
    /// Components with a numerically nonzero singular value.
    pub effective_rank: usize,
    pub randomized: bool,
}

impl LsiDiagnostic {
    pub fn padded(&self) -> usize {
        self.requested - self.effective_rank
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsiFeatures {
    /// One row per column of the input, `rank` wide.
    pub features: DMatrix<f64>,
    /// Leading singular values of the input, zero past the effective rank.
    pub singular_values: Vec<f64>,
    pub diagnostic: LsiDiagnostic,
}

/// Row-wise tf-idf with `idf = ln(N / df) + 1`, where rows are documents.
pub fn tf_idf(counts: &DMatrix<f64>) -> DMatrix<f64> {
    let n = counts.nrows() as f64;
    let mut out = counts.clone();
    for j in 0..counts.ncols() {
        let df = counts.column(j).iter().filter(|&&c| c > 0.0).count();
        if df == 0 {
            continue;
        }
        let idf = (n / df as f64).ln() + 1.0;
        out.column_mut(j).scale_mut(idf);
    }
    out
}

/// Rank-truncated SVD features of the columns of `matrix` (documents are
/// rows). Column `j` gets `V[j, k] * s_k / sqrt(rows)`, so duplicating every
/// document leaves features unchanged. Each component's sign makes its
/// largest-magnitude coordinate positive. Missing rank is zero-padded.
pub fn compute_lsi_features(matrix: &DMatrix<f64>, rank: usize, seed: u64) -> LsiFeatures {
    let (m, n) = matrix.shape();
    let mut features = DMatrix::zeros(n, rank);
    let mut singular_values = vec![0.0; rank];
    let k_max = rank.min(m).min(n);
    if k_max == 0 {
        if rank > 0 {
            log::warn!("LSI on an empty {m}x{n} matrix: {rank} dimensions zero-padded");
        }
        return LsiFeatures {
            features,
            singular_values,
            diagnostic: LsiDiagnostic {
                requested: rank,
                effective_rank: 0,
                randomized: false,
            },
        };
    }

    let randomized = m * n > EXACT_SVD_LIMIT && k_max + OVERSAMPLE < m.min(n);
    let (sigma, v) = if randomized {
        randomized_svd(matrix, k_max, seed)
    } else {
        let svd = matrix.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        (svd.singular_values.iter().copied().collect::<Vec<_>>(), v_t.transpose())
    };

    let top = sigma.first().copied().unwrap_or(0.0);
    let tol = m.max(n) as f64 * f64::EPSILON * top;
    let scale = 1.0 / (m as f64).sqrt();
    let mut effective = 0;
    for k in 0..k_max {
        let s = sigma[k];
        if s <= tol || s == 0.0 {
            break;
        }
        effective += 1;
        singular_values[k] = s;
        let col = v.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            features[(i, k)] = sign * col[i] * s * scale;
        }
    }
    if effective < rank {
        log::warn!("LSI rank {rank} requested, matrix supports {effective}: {} dimensions zero-padded", rank - effective);
    }
    LsiFeatures {
        features,
        singular_values,
        diagnostic: LsiDiagnostic {
            requested: rank,
            effective_rank: effective,
            randomized,
        },
    }
}

fn orthonormal(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized subspace iteration. Returns descending singular values and
/// the matching right singular vectors as columns.
fn randomized_svd(a: &DMatrix<f64>, k: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let width = (k + OVERSAMPLE).min(m).min(n);
    let mut rng = seed::rng(seed);
    let omega = DMatrix::from_fn(n, width, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut q = orthonormal(a * omega);
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormal(a.transpose() * &q);
        q = orthonormal(a * z);
    }
    let b = q.transpose() * a;
    let svd = b.svd(false, true);
    let v = svd.v_t.expect("requested right singular vectors").transpose();
    let sigma: Vec<f64> = svd.singular_values.iter().take(k).copied().collect();
    (sigma, v.columns(0, k).into_owned())
}
