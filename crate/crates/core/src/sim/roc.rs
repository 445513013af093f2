//! ROC curve from per-gene p-values and ground-truth labels.

use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC step function through (0,0) and (1,1), nondecreasing in both
/// coordinates, with one point per distinct p-value.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Step-function evaluation: the TPR attained at the largest achieved
    /// FPR not exceeding `fpr`.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let mut best = 0.0;
        for p in &self.points {
            if p.fpr <= fpr + 1e-12 {
                best = p.tpr;
            } else {
                break;
            }
        }
        best
    }
}

/// Sweep the p-value threshold from most to least significant. Ties move
/// together. Requires at least one positive and one negative label.
pub fn roc_from_pvalues<T: Real>(p_values: &[T], is_positive: &[bool]) -> RocCurve {
    assert_eq!(p_values.len(), is_positive.len());
    let positives = is_positive.iter().filter(|&&b| b).count();
    let negatives = is_positive.len() - positives;
    assert!(positives > 0, "ROC needs at least one positive label");
    assert!(negatives > 0, "ROC needs at least one negative label");

    let mut order: Vec<usize> = (0..p_values.len()).collect();
    order.sort_by(|&i, &j| {
        p_values[i]
            .partial_cmp(&p_values[j])
            .expect("p-values must be comparable")
            .then(i.cmp(&j))
    });

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = 0usize;
    while idx < order.len() {
        let current = p_values[order[idx]];
        while idx < order.len() && p_values[order[idx]] == current {
            if is_positive[order[idx]] {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    RocCurve { points }
}
