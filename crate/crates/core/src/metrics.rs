//! Ranking metrics over alert scores.

use crate::error::{Error, Result};

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(format!(
            "recall@FPR needs both classes (positives {pos}, negatives {neg})"
        )));
    }
    Ok((pos, neg))
}

/// (fpr, recall) after admitting each group of tied scores, highest first,
/// starting from (0, 0).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {s}")));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Largest recall reachable by a score threshold whose false-positive rate
/// does not exceed `max_fpr`.
pub fn recall_at_fpr(scores: &[f64], labels: &[bool], max_fpr: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&max_fpr) {
        return Err(Error::InvalidInput(format!("FPR target {max_fpr} outside [0, 1]")));
    }
    Ok(recall_at(&roc_points(scores, labels)?, max_fpr))
}

/// Recall at `max_fpr` read off precomputed ROC points.
pub fn recall_at(points: &[(f64, f64)], max_fpr: f64) -> f64 {
    points
        .iter()
        .take_while(|(fpr, _)| *fpr <= max_fpr)
        .map(|&(_, r)| r)
        .fold(0.0, f64::max)
}

/// Recall at each FPR in `grid`.
pub fn recall_curve(scores: &[f64], labels: &[bool], grid: &[f64]) -> Result<Vec<f64>> {
    let points = roc_points(scores, labels)?;
    Ok(grid.iter().map(|&f| recall_at(&points, f)).collect())
}

/// FPR grid 0.00, 0.01, ..., 1.00.
pub fn fpr_grid() -> Vec<f64> {
    (0..=100).map(|i| f64::from(i) / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(recall_at_fpr(&s, &l, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn ties_are_admitted_together() {
        let s = [0.5; 4];
        let l = [true, false, true, false];
        assert_eq!(recall_at_fpr(&s, &l, 0.2).unwrap(), 0.0);
        assert_eq!(recall_at_fpr(&s, &l, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(recall_at_fpr(&[0.1, 0.2], &[true, true], 0.2).is_err());
        assert!(recall_at_fpr(&[], &[], 0.2).is_err());
    }

    #[test]
    fn boundary_fpr_is_inclusive() {
        // five negatives: one false positive is exactly 20%
        let s = [0.9, 0.8, 0.7, 0.1, 0.1, 0.1, 0.1];
        let l = [true, false, true, false, false, false, false];
        assert_eq!(recall_at_fpr(&s, &l, 0.2).unwrap(), 1.0);
    }
}
