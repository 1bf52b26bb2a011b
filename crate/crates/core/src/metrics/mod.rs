//! Detection and classification evaluation.

mod classification;
mod detection;
mod report;

pub use classification::{classification_report, ClassificationReport};
pub use detection::{
    average_precision, average_precision_pooled, confidence_curves, detection_confusion, map_range,
    match_greedy, ConfidenceCurves, Curve, Detection, ImageEval, MatchResult, COCO_IOU_THRESHOLDS,
};
pub use report::{confusion_csv, curve_rows_csv, CurveRow};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::labels::BBox;

/// Intersection over union in normalized coordinates.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let area = |r: &BBox| (r.x1() - r.x0()) * (r.y1() - r.y0());
    inter / (area(a) + area(b) - inter)
}

/// Complete IoU: IoU minus the normalized center distance and an
/// aspect-ratio consistency penalty. The regression loss is `1 - ciou`.
pub fn ciou(a: &BBox, b: &BBox) -> Result<f64> {
    if a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0 {
        return Err(Error::invalid("ciou needs boxes with positive extent"));
    }
    let i = iou(a, b);
    let rho2 = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2);
    let ex = a.x1().max(b.x1()) - a.x0().min(b.x0());
    let ey = a.y1().max(b.y1()) - a.y0().min(b.y0());
    let c2 = ex * ex + ey * ey;
    let v = 4.0 / (PI * PI) * ((a.w / a.h).atan() - (b.w / b.h).atan()).powi(2);
    let alpha = if v == 0.0 { 0.0 } else { v / ((1.0 - i) + v) };
    Ok(i - rho2 / c2 - alpha * v)
}

/// 2x2 confusion counts. Rows are ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: [String; 2],
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(labels: [&str; 2], counts: [[u64; 2]; 2]) -> Self {
        Self {
            labels: labels.map(str::to_string),
            counts,
        }
    }

    /// Row-normalized view. Rows without support are all zero.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        self.counts.map(|row| {
            let total = row[0] + row[1];
            if total == 0 {
                [0.0, 0.0]
            } else {
                [row[0] as f64 / total as f64, row[1] as f64 / total as f64]
            }
        })
    }

    /// Whether each row has at least one ground-truth instance.
    pub fn row_supported(&self) -> [bool; 2] {
        self.counts.map(|row| row[0] + row[1] > 0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}
