//! CSV renderings of curves and confusion matrices.

use std::fmt::Write as _;

use super::ConfusionMatrix;

/// One swept threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `threshold,precision,recall,f1` rows.
pub fn curve_rows_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for r in rows {
        let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.6}", r.threshold, r.precision, r.recall, r.f1);
    }
    out
}

/// Counts and the row-normalized view, one line per ground-truth row.
pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let norm = m.normalized();
    let [a, b] = &m.labels;
    let mut out = format!("true\\pred,{a},{b},{a}_norm,{b}_norm\n");
    for (i, label) in m.labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "{label},{},{},{:.6},{:.6}",
            m.counts[i][0], m.counts[i][1], norm[i][0], norm[i][1]
        );
    }
    out
}
