use crate::error::{Error, Result};
use crate::labels::BBox;

use super::report::CurveRow;
use super::{iou, ConfusionMatrix};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const COCO_IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

/// Interpolation recall grid size (0.00 to 1.00 step 0.01).
const RECALL_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0,1]")));
        }
        Ok(Self { bbox, confidence })
    }
}

/// Detections and ground truths of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truths: Vec<BBox>,
}

impl ImageEval {
    pub fn new(detections: Vec<Detection>, ground_truths: Vec<BBox>) -> Self {
        Self { detections, ground_truths }
    }
}

/// Per-detection TP flags (input order) and the unmatched ground truths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    pub true_positive: Vec<bool>,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positive.iter().filter(|&&t| t).count()
    }

    pub fn fp(&self) -> usize {
        self.true_positive.len() - self.tp()
    }
}

/// Indices sorted by descending confidence, ties kept in input order.
fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matcher: in descending confidence, each detection claims the
/// still-unmatched ground truth of highest IoU if that IoU reaches
/// `iou_thr`.
pub fn match_greedy(dets: &[Detection], gts: &[BBox], iou_thr: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut true_positive = vec![false; dets.len()];
    for i in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[i].bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_thr {
                taken[g] = true;
                true_positive[i] = true;
            }
        }
    }
    MatchResult {
        true_positive,
        false_negatives: taken.iter().filter(|&&t| !t).count(),
    }
}

/// `(confidence, is_tp)` over all images, ranked by descending confidence;
/// ties keep image order, then input order.
fn ranked_outcomes(images: &[ImageEval], iou_thr: f64) -> Vec<(f64, bool)> {
    let mut all = Vec::new();
    for im in images {
        let m = match_greedy(&im.detections, &im.ground_truths, iou_thr);
        all.extend(im.detections.iter().zip(m.true_positive).map(|(d, tp)| (d.confidence, tp)));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all
}

fn total_gts(images: &[ImageEval]) -> usize {
    images.iter().map(|im| im.ground_truths.len()).sum()
}

/// 101-point interpolated AP from a ranked TP sequence.
fn interpolated_ap(ranked: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (k, &(_, is_tp)) in ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: best precision at this rank or deeper.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / 100.0;
        while k < recall.len() && recall[k] < level {
            k += 1;
        }
        if k < recall.len() {
            sum += precision[k];
        }
    }
    sum / RECALL_POINTS as f64
}

/// COCO-style 101-point AP of one image.
pub fn average_precision(dets: &[Detection], gts: &[BBox], iou_thr: f64) -> Result<f64> {
    average_precision_pooled(&[ImageEval::new(dets.to_vec(), gts.to_vec())], iou_thr)
}

/// AP with detections pooled across images (matching stays per image).
pub fn average_precision_pooled(images: &[ImageEval], iou_thr: f64) -> Result<f64> {
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(interpolated_ap(&ranked_outcomes(images, iou_thr), n_gt))
}

/// `(mAP@0.5, mAP@0.5:0.95)` for the single class.
pub fn map_range(images: &[ImageEval]) -> Result<(f64, f64)> {
    let map50 = average_precision_pooled(images, 0.5)?;
    let mut sum = 0.0;
    for &t in &COCO_IOU_THRESHOLDS {
        sum += average_precision_pooled(images, t)?;
    }
    Ok((map50, sum / COCO_IOU_THRESHOLDS.len() as f64))
}

/// Ordered `(x, y)` samples with strictly increasing `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub argmax: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceCurves {
    /// One row per swept threshold, ascending.
    pub rows: Vec<CurveRow>,
    pub best_threshold: f64,
    pub best_f1: f64,
}

impl ConfidenceCurves {
    fn curve(&self, f: impl Fn(&CurveRow) -> f64) -> Curve {
        Curve {
            points: self.rows.iter().map(|r| (r.threshold, f(r))).collect(),
            argmax: None,
        }
    }

    pub fn precision(&self) -> Curve {
        self.curve(|r| r.precision)
    }

    pub fn recall(&self) -> Curve {
        self.curve(|r| r.recall)
    }

    pub fn f1(&self) -> Curve {
        Curve {
            argmax: Some((self.best_threshold, self.best_f1)),
            ..self.curve(|r| r.f1)
        }
    }
}

pub(crate) fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Sweeps the confidence threshold over `{0, 1}` and every distinct
/// detection confidence. A detection counts when `confidence >= t`.
/// Precision with no kept detections is reported as 1. The optimal
/// threshold maximizes F1; ties go to the lower threshold.
pub fn confidence_curves(images: &[ImageEval], iou_thr: f64) -> ConfidenceCurves {
    let n_gt = total_gts(images);
    // Greedy matching visits detections by descending confidence, so the
    // matches among detections above a cut are a prefix of the full run.
    let ranked = ranked_outcomes(images, iou_thr);

    let mut thresholds: Vec<f64> = ranked.iter().map(|r| r.0).chain([0.0, 1.0]).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut rows = Vec::with_capacity(thresholds.len());
    // Walk thresholds downward so the kept set only grows.
    let (mut kept, mut tp) = (0usize, 0usize);
    for &t in thresholds.iter().rev() {
        while kept < ranked.len() && ranked[kept].0 >= t {
            tp += usize::from(ranked[kept].1);
            kept += 1;
        }
        let precision = if kept == 0 { 1.0 } else { tp as f64 / kept as f64 };
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        rows.push(CurveRow {
            threshold: t,
            precision,
            recall,
            f1: f1_score(precision, recall),
        });
    }
    rows.reverse();

    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.f1 > best.f1 {
            best = r;
        }
    }
    ConfidenceCurves {
        best_threshold: best.threshold,
        best_f1: best.f1,
        rows,
    }
}

/// Detection confusion at a confidence cut.
///
/// Layout: row 0 is the object class (TP, FN = missed as background), row 1
/// is background (FP, unused). Normalization is over ground-truth rows.
pub fn detection_confusion(images: &[ImageEval], conf_threshold: f64, iou_thr: f64) -> ConfusionMatrix {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for im in images {
        let kept: Vec<Detection> = im
            .detections
            .iter()
            .copied()
            .filter(|d| d.confidence >= conf_threshold)
            .collect();
        let m = match_greedy(&kept, &im.ground_truths, iou_thr);
        tp += m.tp() as u64;
        fp += m.fp() as u64;
        fn_ += m.false_negatives as u64;
    }
    ConfusionMatrix::new(["vocal_cords", "background"], [[tp, fn_], [fp, 0]])
}
