//! Multi-similarity pair filtering and triplet assembly over one batch of
//! unit-norm embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, norm, Matrix};

/// Default margin shared by the positive and negative filters.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Allowed deviation of an embedding norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiningError {
    #[error("{embeddings} embeddings but {labels} labels")]
    LabelCount { embeddings: usize, labels: usize },
    #[error("row {row} has norm {norm}, expected 1")]
    Unnormalized { row: usize, norm: f64 },
    #[error("epsilon must be a non-negative finite number, got {0}")]
    Epsilon(f64),
}

/// Embeddings with one class label per row; every row has unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>) -> Result<Self, MiningError> {
        if embeddings.rows() != labels.len() {
            return Err(MiningError::LabelCount {
                embeddings: embeddings.rows(),
                labels: labels.len(),
            });
        }
        for (row, r) in embeddings.row_iter().enumerate() {
            let n = norm(r);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(MiningError::Unnormalized { row, norm: n });
            }
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `S[i,j] = ⟨z_i, z_j⟩`, the cosine similarity of unit rows.
pub fn cosine_matrix(batch: &EmbeddingBatch) -> Matrix {
    let n = batch.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(batch.embeddings.row(i), batch.embeddings.row(j));
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Which way the two filters point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinerRule {
    /// Keep positives less similar than the hardest negative plus ε, and
    /// negatives more similar than the hardest positive minus ε.
    #[default]
    Informative,
    /// The flipped inequalities: positives more similar than every negative
    /// by ε, negatives less similar than every positive by ε.
    Flipped,
}

/// Ordered `(anchor, other)` index pairs that survived the filters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MinedPairs {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl MinedPairs {
    /// True when nothing survived, e.g. for a single-class batch.
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }
}

/// Filters every ordered pair of the batch against its anchor's hardest
/// opposite pair. Anchors without any positive or without any negative are
/// skipped. All comparisons are strict.
pub fn ms_mine(
    batch: &EmbeddingBatch,
    epsilon: f64,
    rule: MinerRule,
) -> Result<MinedPairs, MiningError> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MiningError::Epsilon(epsilon));
    }
    let s = cosine_matrix(batch);
    let labels = batch.labels();
    let mut out = MinedPairs::default();
    for a in 0..batch.len() {
        let mut hardest_neg = f64::NEG_INFINITY;
        let mut hardest_pos = f64::INFINITY;
        let (mut any_pos, mut any_neg) = (false, false);
        for k in 0..batch.len() {
            if k == a {
                continue;
            }
            let sim = s.get(a, k);
            if labels[k] == labels[a] {
                hardest_pos = hardest_pos.min(sim);
                any_pos = true;
            } else {
                hardest_neg = hardest_neg.max(sim);
                any_neg = true;
            }
        }
        if !(any_pos && any_neg) {
            continue;
        }
        for k in 0..batch.len() {
            if k == a {
                continue;
            }
            let sim = s.get(a, k);
            if labels[k] == labels[a] {
                let keep = match rule {
                    MinerRule::Informative => sim < hardest_neg + epsilon,
                    MinerRule::Flipped => sim > hardest_neg + epsilon,
                };
                if keep {
                    out.positives.push((a, k));
                }
            } else {
                let keep = match rule {
                    MinerRule::Informative => sim > hardest_pos - epsilon,
                    MinerRule::Flipped => sim < hardest_pos - epsilon,
                };
                if keep {
                    out.negatives.push((a, k));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MinedTriplets {
    pub triples: Vec<Triplet>,
}

impl MinedTriplets {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Per anchor, every kept positive crossed with every kept negative.
pub fn assemble_triplets(pairs: &MinedPairs) -> MinedTriplets {
    let mut triples = Vec::new();
    for &(a, p) in &pairs.positives {
        for &(_, n) in pairs.negatives.iter().filter(|(an, _)| *an == a) {
            triples.push(Triplet {
                anchor: a,
                positive: p,
                negative: n,
            });
        }
    }
    MinedTriplets { triples }
}

/// Mines and assembles in one call.
pub fn mine_triplets(
    batch: &EmbeddingBatch,
    epsilon: f64,
    rule: MinerRule,
) -> Result<MinedTriplets, MiningError> {
    Ok(assemble_triplets(&ms_mine(batch, epsilon, rule)?))
}
