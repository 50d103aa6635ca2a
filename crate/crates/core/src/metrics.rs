//! Threshold-free and thresholded evaluation for binary fraud scores.
//!
//! Label `1` is the fraudulent (positive) class. A claim is predicted
//! fraudulent iff its score is `>= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_RECALL: f64 = 0.80;

/// Fraud probabilities with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<usize>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "scored set needs equal non-empty lengths, got {} scores and {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_at(s: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, label == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    Fraud,
    NotFraud,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, `0` when both are `0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision, recall and F1 with `class` taken as positive. Empty
/// denominators give `0`.
pub fn prf1(c: &Confusion, class: Class) -> Prf1 {
    let (tp, fp, fn_) = match class {
        Class::Fraud => (c.tp, c.fp, c.fn_),
        Class::NotFraud => (c.tn, c.fn_, c.fp),
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf1 {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Mean of the two per-class recalls.
pub fn balanced_accuracy(c: &Confusion) -> Result<f64> {
    if c.tp + c.fn_ == 0 || c.tn + c.fp == 0 {
        return Err(Error::UndefinedMetric("balanced accuracy needs both classes".into()));
    }
    Ok(balanced_accuracy_from_recalls(
        prf1(c, Class::Fraud).recall,
        prf1(c, Class::NotFraud).recall,
    ))
}

pub fn balanced_accuracy_from_recalls(recall_fraud: f64, recall_not_fraud: f64) -> f64 {
    (recall_fraud + recall_not_fraud) / 2.0
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(s: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let (score, pos) = (s.scores[i], s.labels[i] == 1);
        match groups.last_mut() {
            Some(g) if g.0 == score => {
                if pos {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((score, pos as usize, (!pos) as usize)),
        }
    }
    groups
}

/// Average precision: each threshold group contributes its share of the
/// positives times the precision at that threshold.
pub fn pr_auc(s: &ScoredSet) -> Result<f64> {
    let p = s.positives();
    if p == 0 {
        return Err(Error::UndefinedMetric("PR AUC needs at least one positive".into()));
    }
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0f64);
    for (_, pos, neg) in tie_groups(s) {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += (pos as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Largest threshold whose fraud recall is at least `min_recall`. Only
/// observed scores are candidates, so the result always sits on a score;
/// among thresholds with identical predictions the observed score is the
/// one returned.
pub fn tune_threshold(s: &ScoredSet, min_recall: f64) -> f64 {
    let p = s.positives();
    let mut tp = 0usize;
    let groups = tie_groups(s);
    for &(score, pos, _) in &groups {
        tp += pos;
        if ratio(tp, p) >= min_recall {
            return score;
        }
    }
    groups.last().map(|g| g.0).unwrap_or(0.0)
}

/// One row of a results table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pr_auc: f64,
    pub balanced_accuracy: f64,
    pub threshold: f64,
    /// Fraud recall on the split the threshold was tuned on.
    pub tuning_recall: f64,
    pub fraud: Prf1,
    pub not_fraud: Prf1,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 10] = [
        "pr_auc",
        "balanced_accuracy",
        "threshold",
        "tuning_recall",
        "fraud_precision",
        "fraud_recall",
        "fraud_f1",
        "not_fraud_precision",
        "not_fraud_recall",
        "not_fraud_f1",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.pr_auc,
            self.balanced_accuracy,
            self.threshold,
            self.tuning_recall,
            self.fraud.precision,
            self.fraud.recall,
            self.fraud.f1,
            self.not_fraud.precision,
            self.not_fraud.recall,
            self.not_fraud.f1,
        ]
    }
}

/// Tunes the threshold on `tuning` and reports every metric on `target`.
pub fn evaluate(tuning: &ScoredSet, target: &ScoredSet, min_recall: f64) -> Result<MetricsReport> {
    let threshold = tune_threshold(tuning, min_recall);
    let tuning_recall = prf1(&confusion_at(tuning, threshold), Class::Fraud).recall;
    let c = confusion_at(target, threshold);
    Ok(MetricsReport {
        pr_auc: pr_auc(target)?,
        balanced_accuracy: balanced_accuracy(&c)?,
        threshold,
        tuning_recall,
        fraud: prf1(&c, Class::Fraud),
        not_fraud: prf1(&c, Class::NotFraud),
    })
}
