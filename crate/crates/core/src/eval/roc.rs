//! Window-level ROC curve and AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub auc: f64,
    /// `(false_positive_rate, true_positive_rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

/// AUC from the Mann-Whitney statistic with midranks for ties, plus the ROC
/// curve swept over distinct score thresholds. `true` marks the positive class.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<Roc> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Argument("scores must be finite".into()));
    }
    let n_pos = scores.iter().filter(|(_, l)| *l).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }

    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Ranks are 1-based; a tie group occupying ranks i+1..=j gets (i + 1 + j) / 2.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = sorted[i..j].iter().filter(|(_, l)| *l).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    let auc = u / (p * n);

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = sorted.len();
    while k > 0 {
        let threshold = sorted[k - 1].0;
        while k > 0 && sorted[k - 1].0 == threshold {
            if sorted[k - 1].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(Roc { auc, points })
}

/// Area under a polyline by the trapezoid rule.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_and_tied() {
        let s = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(roc_auc(&s).unwrap().auc, 1.0);
        let tied = [(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        let r = roc_auc(&tied).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(roc_auc(&[(0.1, true)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn curve_shape_and_area() {
        let s = [(0.1, true), (0.4, false), (0.35, true), (0.8, true), (0.4, true), (0.2, false)];
        let r = roc_auc(&s).unwrap();
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        for w in r.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((trapezoid_area(&r.points) - r.auc).abs() < 1e-12);
    }
}
