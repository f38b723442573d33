//! Confusion matrices, per-class precision / recall / F1 and support-weighted F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `confusion[label][pred]` counts.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion_matrix(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions but {} labels", preds.len(), labels.len())));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::validation("label", format!("class id out of range for {num_classes} classes")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class(confusion: &Confusion) -> Vec<ClassMetrics> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = (0..k).map(|r| confusion[r][c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// `sum_c support_c / N * F1_c`; zero for an empty matrix.
pub fn weighted_f1(confusion: &Confusion) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    per_class(confusion)
        .iter()
        .map(|m| m.support as f64 / total as f64 * m.f1)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub num_samples: u64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|c| confusion[c][c]).sum();
        Self {
            weighted_f1: weighted_f1(&confusion),
            accuracy: ratio(correct, total),
            num_samples: total,
            per_class: per_class(&confusion),
            confusion,
        }
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        Ok(Self::from_confusion(confusion_matrix(preds, labels, num_classes)?))
    }

    /// Confusion matrix as CSV with a header row of class names.
    pub fn confusion_csv(&self) -> String {
        let names: Vec<String> = (0..self.confusion.len()).map(crate::corpus::class_name).collect();
        let mut out = format!("label\\pred,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_is_one_third() {
        let m = Metrics::from_predictions(&[0, 0, 0, 0], &[0, 0, 1, 1], 4).unwrap();
        assert!((m.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.confusion[0][0], 2);
        assert_eq!(m.confusion[1][0], 2);
    }

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 2, 3, 3, 2];
        let m = Metrics::from_predictions(&labels, &labels, 4).unwrap();
        assert_eq!(m.weighted_f1, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                assert_eq!(c > 0, i == j);
            }
        }
    }

    #[test]
    fn empty_class_has_no_weight() {
        // class 3 never occurs and is never predicted
        let m = Metrics::from_predictions(&[0, 1, 2], &[0, 1, 2], 4).unwrap();
        assert_eq!(m.per_class[3].support, 0);
        assert_eq!(m.weighted_f1, 1.0);
    }

    #[test]
    fn single_class_predictions_on_balanced_labels() {
        let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
        let m = Metrics::from_predictions(&[1; 8], &labels, 4).unwrap();
        // class 1: precision 2/8, recall 1, F1 = 0.4; weight 1/4
        assert!((m.weighted_f1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn order_invariance() {
        let preds = [0, 2, 1, 1, 3, 0];
        let labels = [0, 1, 1, 2, 3, 3];
        let a = Metrics::from_predictions(&preds, &labels, 4).unwrap();
        let mut idx: Vec<usize> = (0..6).collect();
        idx.reverse();
        idx.swap(0, 3);
        let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        assert_eq!(a, Metrics::from_predictions(&p2, &l2, 4).unwrap());
    }

    #[test]
    fn length_and_range_errors() {
        assert!(confusion_matrix(&[0], &[0, 1], 4).is_err());
        assert!(confusion_matrix(&[5], &[0], 4).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = Metrics::from_predictions(&[0, 1], &[0, 0], 4).unwrap();
        let csv = m.confusion_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "label\\pred,neutral,happy,sad,angry");
        assert_eq!(lines.next().unwrap(), "neutral,1,1,0,0");
    }
}
