//! Accuracy and macro-F1 from a confusion matrix.

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::model::ModelState;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of ground-truth examples of this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean F1 over the classes that occur in the ground truth.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
}

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = ConfusionMatrix::new(classes);
        for (t, p) in pairs {
            if t >= classes || p >= classes {
                return Err(Error::Index(format!("class pair ({t}, {p}) outside {classes} classes")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Contract("cannot score an empty dataset".into()));
        }
        let k = self.classes();
        let correct: usize = (0..k).map(|i| self.counts[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = self.counts[c][c] as f64;
                let support: usize = self.counts[c].iter().sum();
                let predicted: usize = (0..k).map(|t| self.counts[t][c]).sum();
                let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    class: c,
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
        let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64;
        Ok(Metrics {
            accuracy: correct as f64 / total as f64,
            macro_f1,
            per_class,
            total,
        })
    }
}

/// Scores `state` on `dataset`.
pub fn evaluate(state: &ModelState, dataset: &[LabeledExample]) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let pairs = dataset
        .iter()
        .map(|ex| Ok((ex.label, state.predict_class(&ex.image)?)))
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_pairs(state.spec.classes, pairs)?.metrics()
}
