//! Category-fairness losses.
//!
//! The pipeline: a virtual label distribution `v` over `C` classes is scaled
//! to `E_i = v_i * C` (class frequency relative to the balanced mean), turned
//! into a weight vector `w_i = (1 + alpha * exp(-E_i)) / sum_k (1 + alpha *
//! exp(-E_k))`, and then used two ways:
//!
//! * re-weighted cross-entropy on labeled source batches, each sample
//!   weighted by its class weight and normalized by the batch weight sum;
//! * a KL re-balancing term `KL(p_bar || w)` on unlabeled target batches,
//!   where `p_bar` is the batch-mean predicted distribution.
//!
//! Natural log throughout. The weight vector is treated as a constant inside
//! both losses; it is refreshed once per epoch outside the gradient path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::tensor::Matrix;

/// Floor applied to probabilities and weights inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// A length-C vector of nonnegative category values. Simplex membership
/// (sum == 1) is required where an operation documents it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDistribution {
    values: Vec<f64>,
}

impl CategoryDistribution {
    /// Nonnegative vector over at least two categories.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Argument(
                "category distribution needs at least 2 classes".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Argument(
                "category distribution entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CategoryDistribution { values })
    }

    /// As [`CategoryDistribution::new`] but also checks the simplex sum.
    pub fn simplex(values: Vec<f64>) -> Result<Self> {
        let dist = Self::new(values)?;
        if !dist.is_simplex() {
            return Err(Error::Argument(format!(
                "distribution sums to {}, expected 1",
                dist.values.iter().sum::<f64>()
            )));
        }
        Ok(dist)
    }

    pub fn uniform(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument(
                "category distribution needs at least 2 classes".into(),
            ));
        }
        Ok(CategoryDistribution {
            values: vec![1.0 / num_classes as f64; num_classes],
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_simplex(&self) -> bool {
        (self.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Per-class frequency relative to the balanced mean: `E_i = v_i * C`.
/// The mean of the entries is 1 by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDistribution {
    values: Vec<f64>,
}

impl ScaledDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Argument(
                "scaled distribution needs at least 2 classes".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Argument(
                "scaled distribution entries must be finite and nonnegative".into(),
            ));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if (mean - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "scaled distribution mean is {mean}, expected 1"
            )));
        }
        Ok(ScaledDistribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
}

/// `E_i = v_i * C` for a simplex `v`.
pub fn scale_distribution(v: &CategoryDistribution) -> Result<ScaledDistribution> {
    if !v.is_simplex() {
        return Err(Error::Argument(
            "scale_distribution expects a simplex input".into(),
        ));
    }
    let c = v.len() as f64;
    ScaledDistribution::new(v.values().iter().map(|&x| x * c).collect())
}

/// Normalized negative exponential weights: rarer classes (small `E_i`) get
/// strictly larger weights; `alpha` controls the disparity.
pub fn weight_vector(e: &ScaledDistribution, alpha: f64) -> Result<CategoryDistribution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Argument("alpha must be positive and finite".into()));
    }
    let raw: Vec<f64> = e.values().iter().map(|&x| 1.0 + alpha * (-x).exp()).collect();
    let sum: f64 = raw.iter().sum();
    CategoryDistribution::new(raw.into_iter().map(|w| w / sum).collect())
}

/// A scalar loss together with its exact gradient w.r.t. the logits that
/// produced it.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub logit_grad: Matrix,
}

/// Per-sample cross-entropy `-log p_y` via logsumexp, plus the softmax probs.
fn per_sample_ce(logits: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if batch == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut probs = Matrix::zeros(batch, classes);
    let mut losses = Vec::with_capacity(batch);
    for i in 0..batch {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&q| (q - max).exp()).sum::<f64>().ln() + max;
        losses.push(log_sum - row[labels[i]]);
        let p = softmax(row)?;
        for (c, pv) in p.into_iter().enumerate() {
            probs.set(i, c, pv);
        }
    }
    Ok((losses, probs))
}

/// Weighted cross-entropy: `sum_i w_i * ce_i / sum_i w_i` with `w_i` looked
/// up from `omega` by sample label. Scaling `omega` by a positive constant
/// leaves the value unchanged.
pub fn reweighted_ce(
    logits: &Matrix,
    labels: &[usize],
    omega: &CategoryDistribution,
) -> Result<LossValue> {
    if omega.len() != logits.cols() {
        return Err(Error::Argument(format!(
            "omega has {} classes, logits have {}",
            omega.len(),
            logits.cols()
        )));
    }
    if !omega.values().iter().all(|&w| w > 0.0) {
        return Err(Error::Argument("omega must be strictly positive".into()));
    }
    let (losses, probs) = per_sample_ce(logits, labels)?;
    let weights: Vec<f64> = labels.iter().map(|&y| omega.values()[y]).collect();
    let weight_sum: f64 = weights.iter().sum();
    let value = losses
        .iter()
        .zip(&weights)
        .map(|(l, w)| l * w)
        .sum::<f64>()
        / weight_sum;

    // d value / d q_{i,k} = (w_i / sum w) * (p_{i,k} - [k == y_i])
    let mut grad = probs;
    for i in 0..logits.rows() {
        let scale = weights[i] / weight_sum;
        for k in 0..logits.cols() {
            let indicator = if k == labels[i] { 1.0 } else { 0.0 };
            grad.set(i, k, scale * (grad.get(i, k) - indicator));
        }
    }
    Ok(LossValue {
        value,
        logit_grad: grad,
    })
}

/// Mean cross-entropy, i.e. [`reweighted_ce`] with uniform weights.
pub fn plain_ce(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let uniform = CategoryDistribution::uniform(logits.cols().max(2))?;
    reweighted_ce(logits, labels, &uniform)
}

/// KL divergence from the batch-mean prediction to the weight vector:
/// `sum_k pbar_k * ln(pbar_k / w_k)`, with the gradient flowing through the
/// softmax of every sample. With uniform weights this reduces to
/// `ln C - H(pbar)`, the diversity loss.
pub fn rebalancing_loss(probs: &Matrix, omega: &CategoryDistribution) -> Result<LossValue> {
    let (batch, classes) = (probs.rows(), probs.cols());
    if batch == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if omega.len() != classes {
        return Err(Error::Argument(format!(
            "omega has {} classes, probs have {}",
            omega.len(),
            classes
        )));
    }
    if !omega.values().iter().all(|&w| w > 0.0) {
        return Err(Error::Argument("omega must be strictly positive".into()));
    }
    let mean: Vec<f64> = probs
        .column_sums()
        .into_iter()
        .map(|s| s / batch as f64)
        .collect();
    let mut value = 0.0;
    // d value / d pbar_k, using the clamped log.
    let mut mean_grad = vec![0.0; classes];
    for k in 0..classes {
        let p = mean[k];
        let log_ratio = p.max(LOG_EPS).ln() - omega.values()[k].max(LOG_EPS).ln();
        value += p * log_ratio;
        mean_grad[k] = log_ratio + if p > LOG_EPS { 1.0 } else { 0.0 };
    }

    // Through the softmax: d pbar_m / d q_{i,k} = p_{i,k} (delta_mk - p_{i,m}) / B.
    let mut grad = Matrix::zeros(batch, classes);
    for i in 0..batch {
        let row = probs.row(i);
        let dot: f64 = row.iter().zip(&mean_grad).map(|(p, g)| p * g).sum();
        for k in 0..classes {
            grad.set(i, k, row[k] * (mean_grad[k] - dot) / batch as f64);
        }
    }
    Ok(LossValue {
        value,
        logit_grad: grad,
    })
}
