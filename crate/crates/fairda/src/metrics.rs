//! Fairness-aware evaluation: per-class accuracy, worst-N accuracy, global
//! accuracy, and the confusion matrix.
//!
//! Worst-N accuracy is the mean accuracy of the N classes with the lowest
//! per-class accuracy; it is what exposes category-level disparities that a
//! single global number hides.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;

/// Evaluation summary over a labeled dataset.
///
/// `global_acc` is sample-weighted (total correct over total samples);
/// `class_mean_acc` is the unweighted mean over classes with support. Both
/// are reported since aggregate accuracy figures are quoted both ways.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Per-class accuracy; `None` for classes with no support.
    pub per_class_acc: Vec<Option<f64>>,
    pub class_mean_acc: f64,
    pub global_acc: f64,
    /// Worst-N accuracy keyed by requested N (clipped to the class count).
    pub worst_n: BTreeMap<usize, f64>,
    /// confusion[true][predicted].
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
    /// Classes with zero support, excluded from worst-N ranking.
    pub missing_classes: Vec<usize>,
}

/// Mean of the N smallest entries. Ties are resolved by value, so the result
/// is independent of class order.
pub fn worst_n(per_class_acc: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n > per_class_acc.len() {
        return Err(Error::Argument(format!(
            "worst-N requires 1 <= N <= {}, got {n}",
            per_class_acc.len()
        )));
    }
    let mut sorted = per_class_acc.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("accuracies are finite"));
    Ok(sorted[..n].iter().sum::<f64>() / n as f64)
}

/// Runs the model over a labeled dataset and assembles the report.
/// `worst_n_values` are clipped to the number of ranked classes; classes
/// with zero support are reported as missing and skipped in the ranking.
pub fn evaluate(model: &Model, data: &Dataset, worst_n_values: &[usize]) -> Result<MetricsReport> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Argument("evaluation requires ground-truth labels".into()))?;
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty dataset".into()));
    }
    let c = data.num_classes;
    if c < 2 {
        return Err(Error::Argument("dataset must declare at least 2 classes".into()));
    }
    if model.num_classes() != c {
        return Err(Error::Argument(format!(
            "model has {} classes, dataset has {c}",
            model.num_classes()
        )));
    }
    let predictions = crate::pseudo::pseudo_label(model, data)?;

    let mut confusion = vec![vec![0u64; c]; c];
    for (&truth, &pred) in labels.iter().zip(&predictions) {
        confusion[truth][pred] += 1;
    }
    let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    let total: u64 = support.iter().sum();
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();

    let mut per_class_acc = Vec::with_capacity(c);
    let mut ranked = Vec::new();
    let mut missing_classes = Vec::new();
    for k in 0..c {
        if support[k] == 0 {
            per_class_acc.push(None);
            missing_classes.push(k);
        } else {
            let acc = confusion[k][k] as f64 / support[k] as f64;
            per_class_acc.push(Some(acc));
            ranked.push(acc);
        }
    }
    if !missing_classes.is_empty() {
        eprintln!(
            "warning: classes {missing_classes:?} have no samples and are excluded from worst-N"
        );
    }
    if ranked.is_empty() {
        return Err(Error::Argument("no class has any support".into()));
    }

    let class_mean_acc = ranked.iter().sum::<f64>() / ranked.len() as f64;
    let mut worst = BTreeMap::new();
    for &n in worst_n_values {
        if n == 0 {
            return Err(Error::Argument("worst-N values must be positive".into()));
        }
        worst.insert(n, worst_n(&ranked, n.min(ranked.len()))?);
    }

    Ok(MetricsReport {
        per_class_acc,
        class_mean_acc,
        global_acc: correct as f64 / total as f64,
        worst_n: worst,
        confusion,
        support,
        missing_classes,
    })
}

impl MetricsReport {
    /// Human-readable aligned table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>10} {:>10}", "class", "support", "accuracy");
        for (k, acc) in self.per_class_acc.iter().enumerate() {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "{:<10} {:>10} {:>10.4}", k, self.support[k], a);
                }
                None => {
                    let _ = writeln!(out, "{:<10} {:>10} {:>10}", k, 0, "missing");
                }
            }
        }
        let _ = writeln!(out, "{:<10} {:>10} {:>10.4}", "global", "", self.global_acc);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10.4}",
            "class-mean", "", self.class_mean_acc
        );
        for (n, v) in &self.worst_n {
            let _ = writeln!(out, "{:<10} {:>10} {:>10.4}", format!("worst-{n}"), "", v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;
    use crate::nn::{Activation, DenseLayer};
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Model whose logits equal its inputs, so argmax(features) predicts.
    fn identity_model(c: usize) -> Model {
        let mut weight = Matrix::zeros(c, c);
        for k in 0..c {
            weight.set(k, k, 1.0);
        }
        let head = DenseLayer::new(weight, vec![0.0; c], Activation::Identity).unwrap();
        Model::from_parts(vec![], head).unwrap()
    }

    /// Dataset of one-hot rows for the given labels.
    fn one_hot_dataset(labels: &[usize], c: usize) -> Dataset {
        let mut features = Matrix::zeros(labels.len(), c);
        for (i, &y) in labels.iter().enumerate() {
            features.set(i, y, 1.0);
        }
        Dataset::new(features, Some(labels.to_vec()), Domain::Target, c).unwrap()
    }

    #[test]
    fn perfect_classifier_scores_ones() {
        let labels = [0usize, 1, 2, 0, 1, 2];
        let report = evaluate(&identity_model(3), &one_hot_dataset(&labels, 3), &[1, 2]).unwrap();
        for acc in &report.per_class_acc {
            assert_eq!(acc.unwrap(), 1.0);
        }
        assert_eq!(report.global_acc, 1.0);
        assert_eq!(report.worst_n[&1], 1.0);
        assert_eq!(report.worst_n[&2], 1.0);
    }

    #[test]
    fn worst_two_of_four() {
        let acc = [0.9, 0.2, 0.6, 0.1];
        assert!((worst_n(&acc, 2).unwrap() - 0.15).abs() < 1e-15);
    }

    #[test]
    fn worst_n_edges() {
        let acc = [0.1, 0.5, 0.9];
        assert!((worst_n(&acc, 3).unwrap() - 0.5).abs() < 1e-15);
        assert!((worst_n(&acc, 1).unwrap() - 0.1).abs() < 1e-15);
        assert!((worst_n(&acc, 2).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(worst_n(&acc, 0), Err(Error::Argument(_))));
        assert!(matches!(worst_n(&acc, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn worst_n_matches_subset_enumeration() {
        // Oracle: minimum mean over all N-subsets.
        fn brute_force(acc: &[f64], n: usize) -> f64 {
            fn recurse(acc: &[f64], start: usize, left: usize, sum: f64, best: &mut f64) {
                if left == 0 {
                    *best = best.min(sum);
                    return;
                }
                for i in start..=acc.len() - left {
                    recurse(acc, i + 1, left - 1, sum + acc[i], best);
                }
            }
            let mut best = f64::INFINITY;
            recurse(acc, 0, n, 0.0, &mut best);
            best / n as f64
        }
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let c = rng.gen_range(2..=8);
            let acc: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            for n in 1..=c {
                let fast = worst_n(&acc, n).unwrap();
                let slow = brute_force(&acc, n);
                assert!((fast - slow).abs() < 1e-12, "C={c} N={n}");
            }
        }
    }

    #[test]
    fn worst_n_monotone_and_bounded_by_class_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let c = rng.gen_range(2..=10);
            let acc: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mean = acc.iter().sum::<f64>() / c as f64;
            let mut prev = 0.0;
            for n in 1..=c {
                let w = worst_n(&acc, n).unwrap();
                assert!(w + 1e-12 >= prev);
                assert!(w <= mean + 1e-12);
                prev = w;
            }
            assert!((worst_n(&acc, c).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn worst_n_permutation_invariant() {
        let acc = [0.4, 0.1, 0.8, 0.3];
        let shuffled = [0.8, 0.3, 0.4, 0.1];
        for n in 1..=4 {
            assert_eq!(worst_n(&acc, n).unwrap(), worst_n(&shuffled, n).unwrap());
        }
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let labels = [0usize, 0, 1, 2, 2, 2];
        // Identity model on noisy one-hots still classifies perfectly here;
        // corrupt one sample to get off-diagonal mass.
        let mut data = one_hot_dataset(&labels, 3);
        data.features.set(0, 0, 0.0);
        data.features.set(0, 2, 2.0);
        let report = evaluate(&identity_model(3), &data, &[2]).unwrap();
        for (row, &sup) in report.confusion.iter().zip(&report.support) {
            assert_eq!(row.iter().sum::<u64>(), sup);
        }
        let trace: u64 = (0..3).map(|k| report.confusion[k][k]).sum();
        let total: u64 = report.support.iter().sum();
        assert_eq!(report.global_acc, trace as f64 / total as f64);
        assert_eq!(report.confusion[0][2], 1);
    }

    #[test]
    fn zero_support_class_reported_missing() {
        let labels = [0usize, 0, 2, 2];
        let report = evaluate(&identity_model(3), &one_hot_dataset(&labels, 3), &[2]).unwrap();
        assert_eq!(report.missing_classes, vec![1]);
        assert!(report.per_class_acc[1].is_none());
        // Ranking covers the two present classes only.
        assert_eq!(report.worst_n[&2], 1.0);
    }

    #[test]
    fn unlabeled_dataset_is_argument_error() {
        let data = Dataset::new(Matrix::zeros(2, 3), None, Domain::Target, 3).unwrap();
        assert!(matches!(
            evaluate(&identity_model(3), &data, &[1]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn report_serializes_deterministically() {
        let labels = [0usize, 1, 2, 1];
        let report = evaluate(&identity_model(3), &one_hot_dataset(&labels, 3), &[5, 10]).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"5\""));
        assert!(json.contains("\"10\""));
    }
}
