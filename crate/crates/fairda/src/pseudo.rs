//! Tracks the virtual label distribution across epochs.
//!
//! At the start of each epoch the whole target set is pseudo-labeled with
//! the current model (argmax of logits, no confidence filter), the class
//! histogram is recounted from scratch, and the weight vector is rebuilt
//! from it. Epoch 0 starts from the uniform distribution before any labels
//! exist.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairloss::{scale_distribution, weight_vector, CategoryDistribution};
use crate::nn::Model;

/// Virtual label distribution state for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoState {
    pub epoch: usize,
    /// Empirical class distribution of the latest pseudo-labels.
    pub v: CategoryDistribution,
    /// Weight vector derived from `v`.
    pub omega: CategoryDistribution,
    /// Raw pseudo-label counts behind `v`.
    pub counts: Vec<u64>,
    pub total: u64,
}

impl PseudoState {
    /// Uniform initialization before the first epoch.
    pub fn init(num_classes: usize, alpha: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument("num_classes must be at least 2".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument("alpha must be positive and finite".into()));
        }
        Ok(PseudoState {
            epoch: 0,
            v: CategoryDistribution::uniform(num_classes)?,
            omega: CategoryDistribution::uniform(num_classes)?,
            counts: vec![0; num_classes],
            total: 0,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.v.len()
    }

    /// Recounts the histogram from `pseudo_labels` and rebuilds `v` and
    /// `omega`; the epoch counter advances by one. Counts are never
    /// accumulated across calls.
    pub fn update(&self, pseudo_labels: &[usize], alpha: f64) -> Result<PseudoState> {
        let c = self.num_classes();
        if pseudo_labels.is_empty() {
            return Err(Error::Argument("empty pseudo-label vector".into()));
        }
        if let Some(&bad) = pseudo_labels.iter().find(|&&y| y >= c) {
            return Err(Error::Argument(format!(
                "pseudo-label {bad} out of range for {c} classes"
            )));
        }
        let mut counts = vec![0u64; c];
        for &y in pseudo_labels {
            counts[y] += 1;
        }
        let total = pseudo_labels.len() as u64;
        let v = CategoryDistribution::new(
            counts.iter().map(|&n| n as f64 / total as f64).collect(),
        )?;
        let omega = weight_vector(&scale_distribution(&v)?, alpha)?;
        Ok(PseudoState {
            epoch: self.epoch + 1,
            v,
            omega,
            counts,
            total,
        })
    }
}

/// Argmax pseudo-labels for every target sample, ties broken toward the
/// lowest class index.
pub fn pseudo_label(model: &Model, target: &Dataset) -> Result<Vec<usize>> {
    if target.is_empty() {
        return Err(Error::Argument("cannot pseudo-label an empty dataset".into()));
    }
    let out = model.forward_full(&target.features)?;
    let mut labels = Vec::with_capacity(target.len());
    for i in 0..target.len() {
        labels.push(argmax(out.logits.row(i)));
    }
    Ok(labels)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::nn::{Activation, DenseLayer};
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head_model(weight: Vec<f64>, bias: Vec<f64>, in_dim: usize, classes: usize) -> Model {
        let head = DenseLayer::new(
            Matrix::from_vec(in_dim, classes, weight).unwrap(),
            bias,
            Activation::Identity,
        )
        .unwrap();
        Model::from_parts(vec![], head).unwrap()
    }

    fn dataset(features: Matrix) -> Dataset {
        Dataset::new(features, None, Domain::Target, 3).unwrap()
    }

    #[test]
    fn init_is_uniform() {
        let state = PseudoState::init(3, 5.0).unwrap();
        for &x in state.omega.values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let state = PseudoState::init(2, 5.0).unwrap();
        assert_eq!(state.v.values(), &[0.5, 0.5]);
        assert_eq!(state.epoch, 0);
        assert_eq!(state.total, 0);
        assert!(matches!(PseudoState::init(1, 5.0), Err(Error::Argument(_))));
    }

    #[test]
    fn update_counts_directly() {
        let state = PseudoState::init(3, 5.0).unwrap();
        let next = state.update(&[0, 0, 1, 2], 5.0).unwrap();
        assert_eq!(next.v.values(), &[0.5, 0.25, 0.25]);
        assert_eq!(next.counts, vec![2, 1, 1]);
        assert_eq!(next.total, 4);
        assert_eq!(next.epoch, 1);
    }

    #[test]
    fn update_degenerate_single_class() {
        let state = PseudoState::init(3, 5.0).unwrap();
        let next = state.update(&[1, 1, 1], 5.0).unwrap();
        assert_eq!(next.v.values(), &[0.0, 1.0, 0.0]);
        // The all-present class carries the strictly smallest weight.
        let w = next.omega.values();
        assert!(w[1] < w[0] && w[1] < w[2]);
        // Absent classes carry the maximal weight (1 + alpha) / sum.
        let sum: f64 = [0.0, 3.0, 0.0]
            .iter()
            .map(|&e: &f64| 1.0 + 5.0 * (-e).exp())
            .sum();
        assert!((w[0] - 6.0 / sum).abs() < 1e-15);
    }

    #[test]
    fn update_is_order_free_and_idempotent() {
        let state = PseudoState::init(4, 2.0).unwrap();
        let labels = [3usize, 0, 1, 1, 2, 3, 3];
        let mut shuffled = labels.to_vec();
        shuffled.reverse();
        let a = state.update(&labels, 2.0).unwrap();
        let b = state.update(&shuffled, 2.0).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(a.omega, b.omega);
        // Re-applying the same labels leaves the distribution untouched.
        let again = a.update(&labels, 2.0).unwrap();
        assert_eq!(again.v, a.v);
        assert_eq!(again.omega, a.omega);
        assert_eq!(again.counts, a.counts);
        assert_eq!(again.epoch, a.epoch + 1);
    }

    #[test]
    fn update_balanced_labels_keeps_uniform_weights() {
        let state = PseudoState::init(3, 5.0).unwrap();
        let next = state.update(&[0, 1, 2, 0, 1, 2], 5.0).unwrap();
        for &x in next.omega.values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn update_rejects_out_of_range() {
        let state = PseudoState::init(3, 5.0).unwrap();
        assert!(matches!(
            state.update(&[0, 3], 5.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn invariants_hold_after_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let state = PseudoState::init(5, 5.0).unwrap();
        for _ in 0..20 {
            let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..5)).collect();
            let next = state.update(&labels, 5.0).unwrap();
            assert_eq!(next.counts.iter().sum::<u64>(), next.total);
            for (i, &n) in next.counts.iter().enumerate() {
                assert_eq!(next.v.values()[i], n as f64 / next.total as f64);
            }
            assert!(next.v.is_simplex());
            assert!(next.omega.is_simplex());
        }
    }

    #[test]
    fn zero_head_ties_break_to_class_zero() {
        let model = head_model(vec![0.0; 2 * 3], vec![0.0; 3], 2, 3);
        let data = dataset(Matrix::from_vec(4, 2, vec![0.5; 8]).unwrap());
        assert_eq!(pseudo_label(&model, &data).unwrap(), vec![0; 4]);
    }

    #[test]
    fn forced_class_two_labels_everything_two() {
        let model = head_model(vec![0.0; 2 * 3], vec![0.0, 0.0, 10.0], 2, 3);
        let data = dataset(Matrix::from_vec(3, 2, vec![0.1; 6]).unwrap());
        assert_eq!(pseudo_label(&model, &data).unwrap(), vec![2; 3]);
    }

    #[test]
    fn argmax_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let weight: Vec<f64> = (0..3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = head_model(weight, vec![0.0; 4], 3, 4);
        let features = Matrix::from_vec(
            50,
            3,
            (0..150).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let data = Dataset::new(features.clone(), None, Domain::Target, 4).unwrap();
        let labels = pseudo_label(&model, &data).unwrap();
        let logits = model.forward_full(&features).unwrap().logits;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.row(i);
            // Brute-force scan: first index attaining the maximum.
            let mut best = 0;
            for j in 0..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            assert_eq!(label, best);
        }
    }

    #[test]
    fn empty_dataset_is_argument_error() {
        let model = head_model(vec![0.0; 6], vec![0.0; 3], 2, 3);
        let data = dataset(Matrix::zeros(0, 2));
        assert!(matches!(
            pseudo_label(&model, &data),
            Err(Error::Argument(_))
        ));
    }
}
