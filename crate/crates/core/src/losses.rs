//! Triplet-margin and cross-entropy losses with analytic gradients, and their
//! weighted combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::MinedTriplets;
use crate::numerics::{euclidean, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("triplet index {index} out of range for {rows} embeddings")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{logits} logit rows but {targets} targets")]
    TargetCount { logits: usize, targets: usize },
    #[error("class weights: {0}")]
    ClassWeights(String),
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Per seen-class weights for the classification loss, in seen-class order.
    pub class_weights: Option<Vec<f64>>,
    pub triplet_reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            alpha: 0.5,
            beta: 0.5,
            class_weights: None,
            triplet_reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(LossError::Config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0)
            || !(self.alpha + self.beta).is_finite()
        {
            return Err(LossError::Config(format!(
                "need alpha >= 0, beta >= 0 and alpha + beta > 0, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if let Some(w) = &self.class_weights {
            check_weights(w)?;
        }
        Ok(())
    }
}

fn check_weights(w: &[f64]) -> Result<(), LossError> {
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(LossError::ClassWeights(format!(
            "{bad} is not a positive finite weight"
        )));
    }
    Ok(())
}

/// A scalar loss and its gradient with respect to the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

/// `Σ_t [‖a−p‖ − ‖a−n‖ + margin]_+`, optionally divided by the triplet count.
///
/// Clamped triplets contribute no gradient. A zero distance contributes a
/// zero subgradient for that term.
pub fn triplet_loss(
    embeddings: &Matrix,
    triplets: &MinedTriplets,
    margin: f64,
    reduction: Reduction,
) -> Result<LossValue, LossError> {
    let rows = embeddings.rows();
    let mut grad = Matrix::zeros(rows, embeddings.cols());
    if let Some(t) = triplets
        .triples
        .iter()
        .find(|t| t.anchor.max(t.positive).max(t.negative) >= rows)
    {
        return Err(LossError::IndexOutOfRange {
            index: t.anchor.max(t.positive).max(t.negative),
            rows,
        });
    }
    let scale = match reduction {
        Reduction::Mean if !triplets.is_empty() => 1.0 / triplets.len() as f64,
        _ => 1.0,
    };
    let mut total = 0.0;
    for t in &triplets.triples {
        let (a, p, n) = (
            embeddings.row(t.anchor),
            embeddings.row(t.positive),
            embeddings.row(t.negative),
        );
        let d_ap = euclidean(a, p);
        let d_an = euclidean(a, n);
        let term = d_ap - d_an + margin;
        if term <= 0.0 {
            continue;
        }
        total += term;
        let u_ap: Vec<f64> = unit_diff(a, p, d_ap);
        let u_an: Vec<f64> = unit_diff(a, n, d_an);
        for c in 0..embeddings.cols() {
            let ga = scale * (u_ap[c] - u_an[c]);
            grad.set(t.anchor, c, grad.get(t.anchor, c) + ga);
            grad.set(t.positive, c, grad.get(t.positive, c) - scale * u_ap[c]);
            grad.set(t.negative, c, grad.get(t.negative, c) + scale * u_an[c]);
        }
    }
    Ok(LossValue {
        value: total * scale,
        grad,
    })
}

fn unit_diff(x: &[f64], y: &[f64], dist: f64) -> Vec<f64> {
    if dist == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().zip(y).map(|(a, b)| (a - b) / dist).collect()
}

/// Mean over rows of `w[y]·(−log softmax(logits)[y])`, stabilized by
/// subtracting each row's maximum. Uniform weights when `class_weights` is
/// `None`.
pub fn cross_entropy(
    logits: &Matrix,
    targets: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<LossValue, LossError> {
    let (rows, k) = logits.shape();
    if rows != targets.len() {
        return Err(LossError::TargetCount {
            logits: rows,
            targets: targets.len(),
        });
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(LossError::ClassWeights(format!(
                "{} weights for {k} classes",
                w.len()
            )));
        }
        check_weights(w)?;
    }
    if let Some(&target) = targets.iter().find(|&&t| t >= k) {
        return Err(LossError::TargetOutOfRange { target, classes: k });
    }
    let mut grad = Matrix::zeros(rows, k);
    if rows == 0 {
        return Ok(LossValue { value: 0.0, grad });
    }
    let inv_rows = 1.0 / rows as f64;
    let mut total = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        let w = class_weights.map_or(1.0, |w| w[y]);
        total += w * (log_z - row[y]);
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.set(r, c, w * (p - onehot) * inv_rows);
        }
    }
    Ok(LossValue {
        value: total * inv_rows,
        grad,
    })
}

/// `α·triplet + β·ce`.
pub fn combined_loss(triplet: f64, ce: f64, config: &LossConfig) -> f64 {
    config.alpha * triplet + config.beta * ce
}
