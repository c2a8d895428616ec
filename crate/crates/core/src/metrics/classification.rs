use crate::error::{Error, Result};

/// Mann–Whitney AUC; tied scores across classes count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::mismatch("roc_auc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("roc_auc needs both classes".into()));
    }
    // Rank-sum with midranks for ties.
    let mut idx: alloc::vec::Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum += midrank * idx[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// ROC vertices `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct
/// score threshold in descending order.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<alloc::vec::Vec<(f64, f64)>> {
    roc_auc(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut idx: alloc::vec::Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = alloc::vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push((fp / neg, tp / pos));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Macro average over both classes.
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

/// Decisions `prob ≥ threshold`; a class with no predictions or no
/// members scores zero precision or recall.
pub fn classification_report(
    probs: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ClassificationReport> {
    if probs.len() != labels.len() {
        return Err(Error::mismatch("classification_report", &[probs.len()], &[labels.len()]));
    }
    if probs.is_empty() {
        return Err(Error::Undefined("classification_report on no samples".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let f1 = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    let (p1, r1) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let (p0, r0) = (ratio(tn, tn + fn_), ratio(tn, tn + fp));
    Ok(ClassificationReport {
        accuracy: ratio(tp + tn, probs.len()),
        precision: (p0 + p1) / 2.0,
        recall: (r0 + r1) / 2.0,
        f1: (f1(p0, r0) + f1(p1, r1)) / 2.0,
    })
}
