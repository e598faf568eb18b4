use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{GplError, Result};
use crate::model::Similarity;

/// Scale and similarity of the in-batch softmax loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau: f64,
    pub similarity: Similarity,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 20.0, similarity: Similarity::Cosine }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GplError::Config(format!("tau {} must be > 0", self.tau)));
        }
        Ok(())
    }
}

/// `(1/M) * sum (pred_i - target_i)^2` and its gradient `(2/M)(pred_i - target_i)`.
pub fn margin_mse_loss(predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(GplError::Shape(format!(
            "{} predicted margins vs {} targets",
            predicted.len(),
            target.len()
        )));
    }
    if predicted.is_empty() {
        return Err(GplError::Shape("empty batch".into()));
    }
    if predicted.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(GplError::NonFinite("margin".into()));
    }
    let m = predicted.len() as f64;
    let mut loss = 0.0;
    let grad = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let diff = p - t;
            loss += diff * diff;
            2.0 * diff / m
        })
        .collect();
    Ok((loss / m, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnrlOutput {
    pub loss: f64,
    /// `M x d`
    pub d_queries: Array2<f64>,
    /// `C x d`, one row per candidate.
    pub d_candidates: Array2<f64>,
    /// `M x C` derivative of the loss w.r.t. each (unscaled) similarity.
    pub d_similarities: Array2<f64>,
}

/// In-batch softmax loss with `M` queries and candidates whose first `M` rows
/// are the matching positives:
/// `-(1/M) * sum_i log( exp(tau*s_ii) / sum_j exp(tau*s_ij) )`.
pub fn mnrl_loss(queries: &Array2<f64>, passages: &Array2<f64>, cfg: &LossConfig) -> Result<MnrlOutput> {
    if queries.dim() != passages.dim() {
        return Err(GplError::Shape(format!("{:?} vs {:?}", queries.dim(), passages.dim())));
    }
    mnrl_loss_masked(queries, passages, cfg, None)
}

/// As [`mnrl_loss`] with extra candidate rows (hard negatives) after the
/// positives and an optional `M x C` mask; `true` removes a candidate from a
/// row's denominator. The diagonal is never masked.
pub fn mnrl_loss_masked(
    queries: &Array2<f64>,
    candidates: &Array2<f64>,
    cfg: &LossConfig,
    mask: Option<&Array2<bool>>,
) -> Result<MnrlOutput> {
    cfg.validate()?;
    let (m, d) = queries.dim();
    let c = candidates.nrows();
    if m == 0 {
        return Err(GplError::Shape("empty batch".into()));
    }
    if candidates.ncols() != d || c < m {
        return Err(GplError::Shape(format!("queries {:?}, candidates {:?}", queries.dim(), candidates.dim())));
    }
    if let Some(mask) = mask {
        if mask.dim() != (m, c) {
            return Err(GplError::Shape(format!("mask {:?}, expected ({m}, {c})", mask.dim())));
        }
    }
    let excluded = |i: usize, j: usize| i != j && mask.is_some_and(|mk| mk[[i, j]]);

    let mut d_queries = Array2::zeros((m, d));
    let mut d_candidates = Array2::zeros((c, d));
    let mut d_sims = Array2::zeros((m, c));
    let mut loss = 0.0;
    for i in 0..m {
        let q = queries.row(i);
        let mut sims = Vec::with_capacity(c);
        let mut sim_grads: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(c);
        for j in 0..c {
            let (s, dq, dp) = cfg.similarity.score_with_grad(q, candidates.row(j))?;
            sims.push(s);
            sim_grads.push((dq, dp));
        }
        let max = (0..c)
            .filter(|&j| !excluded(i, j))
            .map(|j| cfg.tau * sims[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..c)
            .filter(|&j| !excluded(i, j))
            .map(|j| (cfg.tau * sims[j] - max).exp())
            .sum();
        let log_z = max + denom.ln();
        loss += log_z - cfg.tau * sims[i];
        for j in 0..c {
            if excluded(i, j) {
                continue;
            }
            let prob = (cfg.tau * sims[j] - log_z).exp();
            let g = (prob - if i == j { 1.0 } else { 0.0 }) * cfg.tau / m as f64;
            d_sims[[i, j]] = g;
            let (dq, dp) = &sim_grads[j];
            d_queries.row_mut(i).scaled_add(g, dq);
            d_candidates.row_mut(j).scaled_add(g, dp);
        }
    }
    Ok(MnrlOutput { loss: loss / m as f64, d_queries, d_candidates, d_similarities: d_sims })
}

/// Mean token cross-entropy of `logits` rows against `targets`, with the
/// gradient w.r.t. each logit row.
pub fn token_cross_entropy(logits: &[Array1<f64>], targets: &[usize]) -> Result<(f64, Vec<Array1<f64>>)> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(GplError::Shape(format!("{} logit rows vs {} targets", logits.len(), targets.len())));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &t) in logits.iter().zip(targets) {
        if t >= row.len() {
            return Err(GplError::Range(format!("target {t} outside vocabulary of {}", row.len())));
        }
        let (lse, probs) = log_softmax_parts(row.view());
        loss += lse - row[t];
        let mut g = probs / n;
        g[t] -= 1.0 / n;
        grads.push(g);
    }
    Ok((loss / n, grads))
}

/// `(logsumexp(row), softmax(row))`, computed with max subtraction.
fn log_softmax_parts(row: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = row.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    (max + sum.ln(), exps / sum)
}
