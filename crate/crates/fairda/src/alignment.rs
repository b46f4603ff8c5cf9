//! Pluggable domain-alignment term.
//!
//! The training objective reserves a slot for a loss that pulls source and
//! target feature distributions together. Two implementations ship: `none`
//! (always zero) and `moment`, the squared distance between batch feature
//! means plus the squared Frobenius distance between batch feature
//! covariances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Which alignment term a run uses. Selected by the config key
/// `alignment = "none" | "moment"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentKind {
    None,
    #[default]
    Moment,
}

impl std::fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlignmentKind::None => write!(f, "none"),
            AlignmentKind::Moment => write!(f, "moment"),
        }
    }
}

impl std::str::FromStr for AlignmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignmentKind::None),
            "moment" => Ok(AlignmentKind::Moment),
            other => Err(Error::Argument(format!(
                "unknown alignment kind '{other}' (expected 'none' or 'moment')"
            ))),
        }
    }
}

/// Alignment loss value with exact gradients w.r.t. both feature batches.
#[derive(Debug, Clone)]
pub struct AlignmentLoss {
    pub value: f64,
    pub source_grad: Matrix,
    pub target_grad: Matrix,
}

/// Evaluates the alignment term between two feature batches of equal width.
/// Symmetric in its arguments; zero iff the first two batch moments match.
/// Batches with a single row contribute only the mean term.
pub fn alignment_loss(
    kind: AlignmentKind,
    source_features: &Matrix,
    target_features: &Matrix,
) -> Result<AlignmentLoss> {
    if source_features.cols() != target_features.cols() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            source_features.cols(),
            target_features.cols()
        )));
    }
    if source_features.rows() == 0 || target_features.rows() == 0 {
        return Err(Error::Shape("feature batches must be non-empty".into()));
    }
    match kind {
        AlignmentKind::None => Ok(AlignmentLoss {
            value: 0.0,
            source_grad: Matrix::zeros(source_features.rows(), source_features.cols()),
            target_grad: Matrix::zeros(target_features.rows(), target_features.cols()),
        }),
        AlignmentKind::Moment => moment_matching(source_features, target_features),
    }
}

struct Moments {
    mean: Vec<f64>,
    /// Centered rows, one per sample.
    centered: Matrix,
    /// Unbiased covariance; `None` for single-row batches.
    cov: Option<Matrix>,
}

fn moments(features: &Matrix) -> Moments {
    let (n, d) = (features.rows(), features.cols());
    let mean: Vec<f64> = features
        .column_sums()
        .into_iter()
        .map(|s| s / n as f64)
        .collect();
    let mut centered = features.clone();
    for i in 0..n {
        for j in 0..d {
            centered.set(i, j, centered.get(i, j) - mean[j]);
        }
    }
    let cov = if n >= 2 {
        let mut cov = centered.transpose().matmul(&centered).expect("square");
        cov.scale(1.0 / (n - 1) as f64);
        Some(cov)
    } else {
        None
    };
    Moments {
        mean,
        centered,
        cov,
    }
}

fn moment_matching(source: &Matrix, target: &Matrix) -> Result<AlignmentLoss> {
    let d = source.cols();
    let s = moments(source);
    let t = moments(target);

    let mean_diff: Vec<f64> = s
        .mean
        .iter()
        .zip(&t.mean)
        .map(|(a, b)| a - b)
        .collect();
    let mut value: f64 = mean_diff.iter().map(|x| x * x).sum();

    // Covariance part only when both sides can estimate one.
    let cov_diff = match (&s.cov, &t.cov) {
        (Some(cs), Some(ct)) => {
            let mut diff = cs.clone();
            for (a, &b) in diff.data_mut().iter_mut().zip(ct.data()) {
                *a -= b;
            }
            value += diff.data().iter().map(|x| x * x).sum::<f64>();
            Some(diff)
        }
        _ => None,
    };

    let grad_for = |features: &Matrix, m: &Moments, sign: f64| -> Result<Matrix> {
        let n = features.rows();
        let mut grad = Matrix::zeros(n, d);
        let mean_scale = sign * 2.0 / n as f64;
        for i in 0..n {
            for j in 0..d {
                grad.set(i, j, mean_scale * mean_diff[j]);
            }
        }
        if let Some(ref diff) = cov_diff {
            // d/dx_i of ||C_s - C_t||^2 = 4/(n-1) * (C_s - C_t) (x_i - mean).
            let mut cov_grad = m.centered.matmul(diff)?;
            cov_grad.scale(sign * 4.0 / (n - 1) as f64);
            grad.add_assign(&cov_grad)?;
        }
        Ok(grad)
    };

    Ok(AlignmentLoss {
        value,
        source_grad: grad_for(source, &s, 1.0)?,
        target_grad: grad_for(target, &t, -1.0)?,
    })
}
