//! Confusion matrix and classification report.
//!
//! Rows of the confusion matrix are true classes, columns are predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self {
            counts: vec![vec![0; c]; c],
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums: number of samples whose true class is `c`.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Column sums: number of samples predicted as `c`.
    pub fn predicted(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|j| self.counts.iter().map(|row| row[j]).sum())
            .collect()
    }
}

/// Builds the matrix from parallel label and prediction sequences.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], class_names: Vec<String>) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(class_names);
    let c = m.num_classes();
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        if p >= c || y >= c {
            return Err(Error::Range(format!(
                "sample {i}: label {y}, prediction {p} with only {c} classes"
            )));
        }
        m.counts[y][p] += 1;
    }
    Ok(m)
}

/// Names `class_0`, `class_1`, ... for callers without real names.
pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class_{c}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when nothing was predicted as this class, so precision is reported as 0.
    pub precision_undefined: bool,
    /// Set when the class has no samples, so recall is reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class and aggregate metrics; empty denominators give 0 and raise a flag.
pub fn report(matrix: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Dataset("cannot report on an empty confusion matrix".into()));
    }
    let support = matrix.support();
    let predicted = matrix.predicted();
    let classes: Vec<ClassMetrics> = (0..matrix.num_classes())
        .map(|c| {
            let tp = matrix.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, predicted[c]);
            let (recall, recall_undefined) = ratio(tp, support[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                name: matrix.class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}")),
                precision,
                recall,
                f1,
                support: support[c],
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let n = classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / n;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(ClassificationReport {
        accuracy: matrix.trace() as f64 / total as f64,
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
        classes,
        total,
    })
}

/// Diagonal over support for each class, `None` for classes without samples.
pub fn per_class_accuracy(matrix: &ConfusionMatrix) -> Vec<Option<f64>> {
    matrix
        .support()
        .iter()
        .enumerate()
        .map(|(c, &s)| (s > 0).then(|| matrix.counts[c][c] as f64 / s as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(c: usize) -> Vec<String> {
        default_class_names(c)
    }

    #[test]
    fn worked_two_class_example() {
        let m = confusion_matrix(&[0, 1, 1, 1], &[0, 0, 1, 1], names(2)).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
        let r = report(&m).unwrap();
        assert_eq!(r.classes[0].precision, 1.0);
        assert!((r.classes[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.classes[0].recall, 0.5);
        assert_eq!(r.classes[1].recall, 1.0);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(per_class_accuracy(&m), vec![Some(0.5), Some(1.0)]);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0, 1, 2, 2, 1, 0, 0];
        let m = confusion_matrix(&labels, &labels, names(3)).unwrap();
        assert_eq!(m.counts, vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        let r = report(&m).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.classes.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    #[test]
    fn empty_inputs_give_zero_matrix() {
        let m = confusion_matrix(&[], &[], names(3)).unwrap();
        assert_eq!(m.total(), 0);
        assert!(report(&m).is_err());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(confusion_matrix(&[0], &[0, 1], names(2)).is_err());
        assert!(confusion_matrix(&[2], &[0], names(2)).is_err());
    }

    #[test]
    fn never_predicted_class_is_flagged() {
        let m = confusion_matrix(&[0, 0], &[0, 1], names(3)).unwrap();
        let r = report(&m).unwrap();
        assert!(r.classes[1].precision_undefined);
        assert!(r.classes[2].recall_undefined);
        assert_eq!(r.classes[2].f1, 0.0);
        assert_eq!(per_class_accuracy(&m)[2], None);
    }

    proptest! {
        #[test]
        fn accuracy_is_weighted_recall(
            c in 2usize..12,
            pairs in proptest::collection::vec((0usize..12, 0usize..12), 1..300),
        ) {
            let labels: Vec<usize> = pairs.iter().map(|p| p.0 % c).collect();
            let preds: Vec<usize> = pairs.iter().map(|p| p.1 % c).collect();
            let m = confusion_matrix(&preds, &labels, names(c)).unwrap();
            let r = report(&m).unwrap();
            prop_assert!((r.accuracy - r.weighted_avg.recall).abs() < 1e-12);
            let exact = labels.iter().zip(&preds).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
            prop_assert!((r.accuracy - exact).abs() < 1e-12);
            let pca = per_class_accuracy(&m);
            for (k, cm) in r.classes.iter().enumerate() {
                prop_assert_eq!(pca[k].unwrap_or(0.0), cm.recall);
                prop_assert!((0.0..=1.0).contains(&cm.f1));
            }
        }

        #[test]
        fn permuting_classes_keeps_aggregates(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100),
        ) {
            let perm = [2usize, 0, 3, 1];
            let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let a = report(&confusion_matrix(&preds, &labels, names(4)).unwrap()).unwrap();
            let pl: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let pp: Vec<usize> = preds.iter().map(|&l| perm[l]).collect();
            let b = report(&confusion_matrix(&pp, &pl, names(4)).unwrap()).unwrap();
            for (k, &pk) in perm.iter().enumerate() {
                prop_assert_eq!(a.classes[k].precision, b.classes[pk].precision);
                prop_assert_eq!(a.classes[k].recall, b.classes[pk].recall);
            }
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
            prop_assert!((a.weighted_avg.precision - b.weighted_avg.precision).abs() < 1e-12);
        }
    }
}
