use crate::error::{Error, Result};

use super::detection::f1_score;
use super::report::CurveRow;
use super::ConfusionMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    /// Rows: true healthy / paralyzed; columns: predicted.
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// Precision of the paralyzed class (0 when nothing is predicted
    /// positive).
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One row per distinct probability, ascending. Rows where nothing is
    /// predicted positive carry precision 1.
    pub pr_curve: Vec<CurveRow>,
}

/// Thresholds probabilities with `p >= threshold` meaning paralyzed.
pub fn classification_report(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ClassificationReport> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::invalid("classification report needs at least one sample"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not binary")));
    }

    let mut counts = [[0u64; 2]; 2];
    for (&p, &y) in probs.iter().zip(labels) {
        counts[usize::from(y)][usize::from(p >= threshold)] += 1;
    }
    let [[tn, fp], [fn_, tp]] = counts;
    let n = probs.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };

    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut thresholds: Vec<f64> = probs.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut pr_curve = Vec::with_capacity(thresholds.len());
    let (mut kept, mut hits) = (0usize, 0usize);
    for &t in thresholds.iter().rev() {
        while kept < order.len() && probs[order[kept]] >= t {
            hits += usize::from(labels[order[kept]] == 1);
            kept += 1;
        }
        let p = if kept == 0 { 1.0 } else { hits as f64 / kept as f64 };
        let r = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
        pr_curve.push(CurveRow { threshold: t, precision: p, recall: r, f1: f1_score(p, r) });
    }
    pr_curve.reverse();

    Ok(ClassificationReport {
        confusion: ConfusionMatrix::new(["healthy", "paralyzed"], counts),
        accuracy,
        precision,
        recall,
        f1: f1_score(precision, recall),
        pr_curve,
    })
}
