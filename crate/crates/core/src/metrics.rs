//! Confusion matrices and the scores derived from them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `classes x classes` counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::contract("confusion_matrix", "matrix is not square"));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        let mut m = ConfusionMatrix::new(classes);
        m.record(truth, predicted)?;
        Ok(m)
    }

    pub fn record(&mut self, truth: &[usize], predicted: &[usize]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(Error::contract(
                "confusion_matrix",
                format!("{} labels vs {} predictions", truth.len(), predicted.len()),
            ));
        }
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= self.classes || p >= self.classes {
                return Err(Error::contract(
                    "confusion_matrix",
                    format!("class pair ({t}, {p}) outside {} classes", self.classes),
                ));
            }
            self.counts[t][p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_confusion(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Scores of one confusion matrix. Precision, recall or F1 with a zero
/// denominator are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub weighted_f1: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let c = confusion.classes;
        let total = confusion.total();
        let correct: u64 = (0..c).map(|k| confusion.counts[k][k]).sum();
        let per_class: Vec<ClassScores> = (0..c)
            .map(|k| {
                let tp = confusion.counts[k][k];
                let precision = ratio(tp, confusion.predicted(k));
                let recall = ratio(tp, confusion.support(k));
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassScores {
                    precision,
                    recall,
                    f1,
                    support: confusion.support(k),
                }
            })
            .collect();
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            per_class.iter().map(|s| s.support as f64 * s.f1).sum::<f64>() / total as f64
        };
        let macro_f1 = if c == 0 {
            0.0
        } else {
            per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64
        };
        Metrics {
            accuracy: ratio(correct, total),
            per_class,
            weighted_f1,
            macro_f1,
            confusion,
        }
    }
}
