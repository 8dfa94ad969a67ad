//! Classification and regression metrics.

use crate::error::{Error, Result};

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| argmax(s) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney ROC-AUC; `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// `sum_k (R_k - R_{k-1}) P_k` over the list sorted by descending score; `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort: tied scores keep input order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
            ap += tp as f64 / (k + 1) as f64 / n_pos as f64;
        }
    }
    Some(ap)
}

/// `1 - SS_res / SS_tot`; errors on a constant target.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R^2 of a constant target".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Macro average over label columns of a per-column metric, with the indices of skipped columns.
pub fn macro_average(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    metric: fn(&[f64], &[bool]) -> Option<f64>,
) -> (Option<f64>, Vec<usize>) {
    let n_cols = labels.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for c in 0..n_cols {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        match metric(&s, &l) {
            Some(v) => {
                total += v;
                used += 1;
            }
            None => skipped.push(c),
        }
    }
    ((used > 0).then(|| total / used as f64), skipped)
}

/// Micro average: every (row, column) cell pooled into one ranking.
pub fn micro_average(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    metric: fn(&[f64], &[bool]) -> Option<f64>,
) -> Option<f64> {
    let s: Vec<f64> = scores.iter().flatten().copied().collect();
    let l: Vec<bool> = labels.iter().flatten().copied().collect();
    metric(&s, &l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        // Pairs (pos, neg): (.9,.8) (.9,.6) (.7,.6) ordered, (.7,.8) not -> 3/4.
        assert_eq!(roc_auc(&s, &l), Some(0.75));
        // Precision 1/1 at rank 1 and 2/3 at rank 3.
        assert!((average_precision(&s, &l).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_and_degenerate_labels() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&s, &l), Some(1.0));
        assert_eq!(average_precision(&s, &l), Some(1.0));
        assert_eq!(roc_auc(&s, &[true; 4]), None);
        assert_eq!(average_precision(&s, &[false; 4]), None);
        assert_eq!(roc_auc(&[0.5; 4], &l), Some(0.5));
    }

    #[test]
    fn r2_cases() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_score(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(r2_score(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn macro_skips_single_class_columns() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.3]];
        let labels = vec![vec![true, true], vec![false, true]];
        let (v, skipped) = macro_average(&scores, &labels, roc_auc);
        assert_eq!(v, Some(1.0));
        assert_eq!(skipped, vec![1]);
    }

    #[test]
    fn accuracy_ignores_logit_shift() {
        let s = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let shifted: Vec<Vec<f64>> = s
            .iter()
            .map(|r| r.iter().map(|v| v + 7.5).collect())
            .collect();
        assert_eq!(accuracy(&s, &[1, 0]), 1.0);
        assert_eq!(accuracy(&shifted, &[1, 1]), 0.5);
    }

    proptest! {
        #[test]
        fn auc_invariances(data in prop::collection::vec((-10.0f64..10.0, any::<bool>()), 2..40)) {
            let (s, l): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
            if let Some(a) = roc_auc(&s, &l) {
                let mono: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
                prop_assert!((roc_auc(&mono, &l).unwrap() - a).abs() < 1e-12);
                let rev: Vec<f64> = s.iter().map(|v| -v).collect();
                prop_assert!((roc_auc(&rev, &l).unwrap() - (1.0 - a)).abs() < 1e-12);
            }
        }
    }
}
