//! Classification metrics and public/private separation statistics.

use serde::{Deserialize, Serialize};

use crate::disentangle::argmax;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidArgument(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Self {
        let mut cm = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p);
        }
        cm
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// `trace / total`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("accuracy of an empty confusion matrix".into()));
    }
    let correct: u64 = (0..cm.classes()).map(|c| cm.counts[c][c]).sum();
    Ok(correct as f64 / total as f64)
}

/// Support-weighted mean of per-class F1; a class with `P + R = 0` scores 0.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "weighted F1 of an empty confusion matrix".into(),
        ));
    }
    let mut score = 0.0;
    for c in 0..cm.classes() {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        let tp = cm.counts[c][c] as f64;
        let predicted = cm.predicted(c) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        score += support as f64 / total as f64 * f1;
    }
    Ok(score)
}

/// Arg-max of the time-averaged log-probabilities; ties go to the lower
/// class.
pub fn subject_prediction(log_probs: &Tensor) -> usize {
    let (t, c) = (log_probs.rows(), log_probs.cols());
    let mean: Vec<f64> = (0..c)
        .map(|j| (0..t).map(|i| log_probs.at(i, j)).sum::<f64>() / t as f64)
        .collect();
    argmax(&mean)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Metrics {
            accuracy: accuracy(cm)?,
            weighted_f1: weighted_f1(cm)?,
        })
    }
}

/// Between-event over within-event mean pairwise distances of
/// time-averaged features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub public_between: f64,
    pub public_within: f64,
    pub public_ratio: f64,
    pub private_between: f64,
    pub private_within: f64,
    pub private_ratio: f64,
}

/// `features[s][k]` is the `T × D` representation of event `k` of sample
/// `s`. Returns (between, within, ratio); pairs from the same sample are
/// skipped, and `0/0` counts as a ratio of 1.
pub fn event_distance_ratio(features: &[Vec<Tensor>]) -> (f64, f64, f64) {
    let means: Vec<Vec<Vec<f64>>> = features
        .iter()
        .map(|events| {
            events
                .iter()
                .map(|x| {
                    (0..x.cols())
                        .map(|j| (0..x.rows()).map(|i| x.at(i, j)).sum::<f64>() / x.rows() as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    let (mut between, mut nb, mut within, mut nw) = (0.0, 0usize, 0.0, 0usize);
    for s1 in 0..means.len() {
        for s2 in (s1 + 1)..means.len() {
            for (k1, a) in means[s1].iter().enumerate() {
                for (k2, b) in means[s2].iter().enumerate() {
                    let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    if k1 == k2 {
                        within += d;
                        nw += 1;
                    } else {
                        between += d;
                        nb += 1;
                    }
                }
            }
        }
    }
    let between = if nb > 0 { between / nb as f64 } else { 0.0 };
    let within = if nw > 0 { within / nw as f64 } else { 0.0 };
    let ratio = if between == 0.0 && within == 0.0 {
        1.0
    } else if within == 0.0 {
        // unbounded; kept finite so reports stay valid JSON
        f64::MAX
    } else {
        between / within
    };
    (between, within, ratio)
}

pub fn separation_stats(publics: &[Vec<Tensor>], privates: &[Vec<Tensor>]) -> SeparationStats {
    let (public_between, public_within, public_ratio) = event_distance_ratio(publics);
    let (private_between, private_within, private_ratio) = event_distance_ratio(privates);
    SeparationStats {
        public_between,
        public_within,
        public_ratio,
        private_between,
        private_within,
        private_ratio,
    }
}
