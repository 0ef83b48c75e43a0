//! Confusion-matrix metrics, per class (one-vs-rest) and overall
//! (normal vs. non-normal).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidConfig(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= NUM_CLASSES || l >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange { label: p.max(l), classes: NUM_CLASSES });
        }
        cm.counts[l][p] += 1;
    }
    Ok(cm)
}

/// Which metrics hit a 0/0 denominator and were reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Degenerate {
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.sensitivity || self.specificity || self.precision || self.f1
    }
}

/// Binary outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Outcomes {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Metrics as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub outcomes: Outcomes,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsRow {
    pub fn from_outcomes(o: Outcomes) -> Self {
        let mut d = Degenerate::default();
        let total = o.tp + o.tn + o.fp + o.fn_;
        let accuracy = if total == 0 { 0.0 } else { (o.tn + o.tp) as f64 / total as f64 };
        let sensitivity = ratio(o.tp, o.tp + o.fn_, &mut d.sensitivity);
        let specificity = ratio(o.tn, o.tn + o.fp, &mut d.specificity);
        let precision = ratio(o.tp, o.tp + o.fp, &mut d.precision);
        let f1 = if precision + sensitivity == 0.0 {
            d.f1 = true;
            0.0
        } else {
            2.0 * sensitivity * precision / (sensitivity + precision)
        };
        Self { accuracy, sensitivity, specificity, precision, f1, outcomes: o, degenerate: d }
    }
}

/// One-vs-rest metrics for class `c`.
pub fn per_class_metrics(cm: &ConfusionMatrix, c: usize) -> MetricsRow {
    let tp = cm.counts[c][c];
    let fp = cm.col_sum(c) - tp;
    let fn_ = cm.row_sum(c) - tp;
    let tn = cm.total() - tp - fp - fn_;
    MetricsRow::from_outcomes(Outcomes { tp, tn, fp, fn_ })
}

/// Overall metrics with N (index 0) as the negative class.
///
/// * TN: normal beats predicted normal.
/// * FP: normal beats predicted as any non-normal class.
/// * TP: non-normal beats predicted as their own class.
/// * FN: non-normal beats predicted normal or as another non-normal class.
///
/// The four counts partition the matrix, so `accuracy` equals the multiclass
/// trace / total.
pub fn overall_metrics(cm: &ConfusionMatrix) -> MetricsRow {
    let tn = cm.counts[0][0];
    let fp = cm.row_sum(0) - tn;
    let tp: u64 = (1..NUM_CLASSES).map(|c| cm.counts[c][c]).sum();
    let positives: u64 = (1..NUM_CLASSES).map(|c| cm.row_sum(c)).sum();
    MetricsRow::from_outcomes(Outcomes { tp, tn, fp, fn_: positives - tp })
}

/// Multiclass accuracy, trace / total (0 for an empty matrix).
pub fn multiclass_accuracy(cm: &ConfusionMatrix) -> f64 {
    match cm.total() {
        0 => 0.0,
        n => cm.trace() as f64 / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0, 1, 2, 3, 4, 0, 0];
        let cm = confusion(&labels, &labels).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        for c in 0..5 {
            let m = per_class_metrics(&cm, c);
            assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.precision, m.f1), (1.0, 1.0, 1.0, 1.0, 1.0));
        }
        let o = overall_metrics(&cm);
        assert_eq!((o.accuracy, o.sensitivity), (1.0, 1.0));
    }

    #[test]
    fn constant_prediction_fills_one_column() {
        let cm = confusion(&[0; 6], &[0, 1, 2, 3, 4, 1]).unwrap();
        for (i, row) in cm.counts.iter().enumerate() {
            assert_eq!(row[1..].iter().sum::<u64>(), 0, "row {i}");
        }
        assert_eq!(overall_metrics(&cm).sensitivity, 0.0);
    }

    #[test]
    fn mismatched_lengths_fail() {
        assert!(confusion(&[0, 1], &[0]).is_err());
        assert!(confusion(&[5], &[0]).is_err());
    }

    #[test]
    fn hand_computed_binary_case() {
        let m = MetricsRow::from_outcomes(Outcomes { tp: 2, tn: 3, fp: 1, fn_: 0 });
        assert!((m.accuracy - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.sensitivity, 1.0);
        assert!((m.f1 - 0.8).abs() < 1e-12);
        assert!((m.specificity - 0.75).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_flagged() {
        let cm = confusion(&[0, 1, 0], &[0, 1, 1]).unwrap();
        let m = per_class_metrics(&cm, 3);
        assert_eq!(m.sensitivity, 0.0);
        assert!(m.degenerate.sensitivity && m.degenerate.precision && m.degenerate.f1);
        assert!(!m.degenerate.specificity);
    }
}
