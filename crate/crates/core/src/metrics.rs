//! Void-detection quality of a predicted scaling field.
//!
//! Voids are the positive class. A node's score is `1 - gamma`, so lower
//! predicted scaling means "more void-like".

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Positive (void) wherever the true scaling is strictly below one half.
pub fn binarize_labels(gamma_true: &ScalarField) -> Vec<bool> {
    gamma_true.values().iter().map(|&v| v < 0.5).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Distinct scores in descending order.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Precision-recall curve from raw scores; a sample is predicted positive
/// when its score is at least the threshold.
pub fn pr_curve_from_scores(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidInput(
            "no positive labels, recall is undefined".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut curve = PrCurve {
        thresholds: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        curve.thresholds.push(t);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(tp as f64 / positives as f64);
    }
    Ok(curve)
}

/// Precision-recall curve of a predicted scaling field against void labels.
pub fn pr_curve(pred: &ScalarField, labels: &[bool]) -> Result<PrCurve> {
    let scores: Vec<f64> = pred.values().iter().map(|g| 1.0 - g).collect();
    pr_curve_from_scores(&scores, labels)
}

/// Step-sum `sum_n (R_n - R_{n-1}) P_n` with `R_{-1} = 0`.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in curve.recall.iter().zip(&curve.precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Average precision of `pred` against the voids of `gamma_true`.
pub fn field_average_precision(pred: &ScalarField, gamma_true: &ScalarField) -> Result<f64> {
    let labels = binarize_labels(gamma_true);
    Ok(average_precision(&pr_curve(pred, &labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use proptest::prelude::*;

    fn labels(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn binarize_uses_strict_half() {
        let g = GridSpec::new(8, 8, 1.0, 1.0).unwrap();
        assert!(binarize_labels(&ScalarField::constant(g, 1.0)).iter().all(|&b| !b));
        assert!(binarize_labels(&ScalarField::constant(g, 0.5)).iter().all(|&b| !b));
        assert!(binarize_labels(&ScalarField::constant(g, 0.4999)).iter().all(|&b| b));
    }

    #[test]
    fn four_element_sweep() {
        let c = pr_curve_from_scores(&[0.9, 0.8, 0.7, 0.1], &labels(&[1, 0, 1, 0])).unwrap();
        assert_eq!(c.recall, vec![0.5, 0.5, 1.0, 1.0]);
        assert_eq!(c.precision, vec![1.0, 0.5, 2.0 / 3.0, 0.5]);
        let ap = average_precision(&c);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn two_element_sweep() {
        let c = pr_curve_from_scores(&[0.9, 0.1], &labels(&[0, 1])).unwrap();
        assert_eq!(average_precision(&c), 0.5);
    }

    #[test]
    fn perfect_prediction_has_unit_ap() {
        let c = pr_curve_from_scores(&[1.0, 0.0, 1.0, 0.0], &labels(&[1, 0, 1, 0])).unwrap();
        assert_eq!((c.recall[0], c.precision[0]), (1.0, 1.0));
        assert_eq!(average_precision(&c), 1.0);
    }

    #[test]
    fn constant_scores_give_base_rate() {
        let c = pr_curve_from_scores(&[0.3; 5], &labels(&[1, 0, 0, 1, 0])).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.recall[0], 1.0);
        assert!((c.precision[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn missing_positives_is_an_error() {
        assert!(pr_curve_from_scores(&[0.1, 0.2], &labels(&[0, 0])).is_err());
        assert!(pr_curve_from_scores(&[0.1], &labels(&[0, 0])).is_err());
    }

    #[test]
    fn field_ap_of_truth_is_one() {
        let g = GridSpec::new(16, 8, 2.0, 1.0).unwrap();
        let e = crate::field::EllipseParams { xc: 1.0, yc: 0.5, a: 0.3, b: 0.2, theta: 0.3 };
        let truth = crate::field::rasterize_ellipse(&e, &g, 1e-3).unwrap();
        assert_eq!(field_average_precision(&truth, &truth).unwrap(), 1.0);
        let positives = binarize_labels(&truth).iter().filter(|&&b| b).count();
        assert_eq!(positives, truth.values().iter().filter(|&&v| v == 1e-3).count());
    }

    proptest! {
        #[test]
        fn ap_bounded_and_invariant_under_monotone_maps(
            data in prop::collection::vec((any::<bool>(), 0u8..20), 2..64)
        ) {
            let lab: Vec<bool> = data.iter().map(|d| d.0).collect();
            prop_assume!(lab.iter().any(|&b| b));
            let scores: Vec<f64> = data.iter().map(|d| d.1 as f64 / 20.0).collect();
            let c = pr_curve_from_scores(&scores, &lab).unwrap();
            let ap = average_precision(&c);
            prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-15);
            for w in c.recall.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            let ap2 = average_precision(&pr_curve_from_scores(&mapped, &lab).unwrap());
            prop_assert_eq!(ap, ap2);
            // perfect separation iff AP == 1
            let min_pos = scores.iter().zip(&lab).filter(|p| *p.1).map(|p| *p.0).fold(f64::MAX, f64::min);
            let max_neg = scores.iter().zip(&lab).filter(|p| !*p.1).map(|p| *p.0).fold(f64::MIN, f64::max);
            prop_assert_eq!(ap == 1.0, min_pos > max_neg);
        }
    }
}
