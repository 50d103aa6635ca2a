//! Brute-force metric references. Every quantity is recounted from the
//! raw (score, label) pairs at each candidate threshold; nothing is shared
//! with the sorted, incremental implementations under test.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Case {
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

/// `n ≤ 20` points on a coarse score grid so that ties are common; about
/// one case in ten has a single score value.
pub fn random_case(r: &mut ChaCha8Rng) -> Case {
    let n = r.gen_range(1..=20);
    let levels = if r.gen_bool(0.1) { 1 } else { r.gen_range(2..=10) };
    let prevalence = r.gen_range(0.05..0.95);
    let scores = (0..n).map(|_| r.gen_range(0..levels) as f64 / 9.0).collect();
    let labels = (0..n).map(|_| r.gen_bool(prevalence) as usize).collect();
    Case { scores, labels }
}

/// (tp, fp, tn, fn) with fraud predicted iff score ≥ t.
pub fn counts(c: &Case, t: f64) -> (usize, usize, usize, usize) {
    let mut k = (0, 0, 0, 0);
    for i in 0..c.scores.len() {
        let pred = c.scores[i] >= t;
        let pos = c.labels[i] == 1;
        if pred && pos {
            k.0 += 1;
        } else if pred {
            k.1 += 1;
        } else if !pos {
            k.2 += 1;
        } else {
            k.3 += 1;
        }
    }
    k
}

fn div(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// (precision, recall, f1) for the fraud class at `t`, or for not-fraud
/// when `fraud` is false.
pub fn prf1(c: &Case, t: f64, fraud: bool) -> (f64, f64, f64) {
    let (tp, fp, tn, fn_) = counts(c, t);
    let (hit, false_alarm, miss) = if fraud { (tp, fp, fn_) } else { (tn, fn_, fp) };
    let p = div(hit, hit + false_alarm);
    let r = div(hit, hit + miss);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn balanced_accuracy(c: &Case, t: f64) -> Option<f64> {
    let (tp, fp, tn, fn_) = counts(c, t);
    (tp + fn_ > 0 && tn + fp > 0).then(|| (div(tp, tp + fn_) + div(tn, tn + fp)) / 2.0)
}

/// Distinct scores, highest first.
pub fn thresholds(c: &Case) -> Vec<f64> {
    let mut t = c.scores.clone();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Step-wise average precision: sweep every distinct threshold from the
/// top; each step adds its recall gain times the precision there.
pub fn average_precision(c: &Case) -> Option<f64> {
    let positives = c.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return None;
    }
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for t in thresholds(c) {
        let (tp, fp, _, _) = counts(c, t);
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / positives as f64) * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    Some(ap)
}

/// Largest observed score whose fraud recall reaches `min_recall`.
pub fn tuned_threshold(c: &Case, min_recall: f64) -> f64 {
    thresholds(c)
        .into_iter()
        .find(|&t| prf1(c, t, true).1 >= min_recall)
        .unwrap_or_else(|| thresholds(c).last().copied().unwrap_or(0.0))
}

/// Every disagreement between the library and the references on `c`,
/// checked at every distinct score, at 0 and just above the maximum.
pub fn disagreements(c: &Case) -> Vec<String> {
    use mmfuse::metrics::{balanced_accuracy as ba, confusion_at, pr_auc, prf1 as lib_prf1, tune_threshold, Class, ScoredSet};
    let s = ScoredSet::new(c.scores.clone(), c.labels.clone()).unwrap();
    let mut bad = Vec::new();
    let mut ts = thresholds(c);
    ts.push(0.0);
    ts.push(ts[0] + 1e-9);
    for t in ts {
        let k = confusion_at(&s, t);
        if (k.tp, k.fp, k.tn, k.fn_) != counts(c, t) {
            bad.push(format!("confusion_at({t}) on {c:?}"));
        }
        for (class, fraud) in [(Class::Fraud, true), (Class::NotFraud, false)] {
            let m = lib_prf1(&k, class);
            if (m.precision, m.recall, m.f1) != prf1(c, t, fraud) {
                bad.push(format!("prf1({t}, {class:?}) on {c:?}"));
            }
        }
        if ba(&k).ok() != balanced_accuracy(c, t) {
            bad.push(format!("balanced_accuracy({t}) on {c:?}"));
        }
    }
    if pr_auc(&s).ok() != average_precision(c) {
        bad.push(format!("pr_auc on {c:?}: {:?} vs {:?}", pr_auc(&s).ok(), average_precision(c)));
    }
    for min_recall in [0.5, 0.8, 1.0] {
        if tune_threshold(&s, min_recall) != tuned_threshold(c, min_recall) {
            bad.push(format!("tune_threshold({min_recall}) on {c:?}"));
        }
    }
    bad
}
