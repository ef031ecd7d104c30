use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_labels(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} truth labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(bad) = y_true.iter().chain(y_pred).find(|&&c| c >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{classes}")));
    }
    Ok(())
}

/// `confusion[t][p]` counts samples with truth `t` predicted as `p`.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check_labels(y_true, y_pred, classes)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    (0..confusion.len())
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let fp: usize = (0..confusion.len()).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
            let fn_: usize = (0..confusion.len()).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            let denom = 2.0 * tp + fp as f64 + fn_ as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1. A class absent from both truth and
/// prediction scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred, classes)?;
    Ok(per_class_f1(&m).iter().sum::<f64>() / classes as f64)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    hits as f64 / y_true.len() as f64
}

/// AUC of one binary problem by midranks: equals
/// `P(pos > neg) + ½ P(pos = neg)` over all positive/negative pairs.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One-vs-rest AUROC macro-averaged over classes that have both positives
/// and negatives. `None` when no class qualifies.
pub fn auroc_ovr(y_true: &[usize], scores: &[Vec<f64>], classes: usize) -> Result<Option<f64>> {
    if y_true.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} truth labels vs {} score vectors",
            y_true.len(),
            scores.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != classes) {
        return Err(Error::Shape(format!("score vector of length {} for {classes} classes", s.len())));
    }
    let mut aucs = Vec::new();
    for c in 0..classes {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        match binary_auc(&col, &pos) {
            Some(a) => aucs.push(a),
            None => tracing::debug!(class = c, "class excluded from AUROC: single-sided"),
        }
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> f64 {
    let n = predictions.len().max(1) as f64;
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    (sse / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
}

impl MetricsReport {
    /// `scores` may be empty when only hard labels are available.
    pub fn compute(y_true: &[usize], y_pred: &[usize], scores: &[Vec<f64>], classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(y_true, y_pred, classes)?;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = (0..classes)
            .map(|c| ratio(confusion[c][c], (0..classes).map(|t| confusion[t][c]).sum()))
            .collect();
        let recall = (0..classes)
            .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
            .collect();
        let auc = if scores.is_empty() {
            None
        } else {
            auroc_ovr(y_true, scores, classes)?
        };
        Ok(Self {
            macro_f1: per_class_f1(&confusion).iter().sum::<f64>() / classes as f64,
            auc,
            accuracy: accuracy(y_true, y_pred),
            precision,
            recall,
            confusion,
            samples: y_true.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_macro_f1() {
        let f1 = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn f1_extremes() {
        assert_eq!(macro_f1(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 1, 1], &[1, 0, 0], 2).unwrap(), 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        // class 2 never appears: (1 + 1 + 0) / 3
        let f1 = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(macro_f1(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn auc_extremes() {
        let y = [0, 0, 1, 1];
        let sep: Vec<Vec<f64>> = [0.1, 0.2, 0.8, 0.9].iter().map(|&p| vec![1.0 - p, p]).collect();
        assert_eq!(auroc_ovr(&y, &sep, 2).unwrap(), Some(1.0));
        let flat = vec![vec![0.5, 0.5]; 4];
        assert_eq!(auroc_ovr(&y, &flat, 2).unwrap(), Some(0.5));
    }

    #[test]
    fn single_sided_problem_has_no_auc() {
        assert_eq!(auroc_ovr(&[1, 1], &[vec![0.2, 0.8], vec![0.4, 0.6]], 2).unwrap(), None);
    }

    #[test]
    fn report_rows_match_truth_counts() {
        let r = MetricsReport::compute(&[0, 0, 1, 2], &[0, 1, 1, 1], &[], 3).unwrap();
        let rows: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![2, 1, 1]);
        assert_eq!(r.recall, vec![0.5, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            data in prop::collection::vec((0usize..3, 0usize..3, 0.0f64..1.0), 2..40),
            seed in any::<u64>(),
        ) {
            let y: Vec<usize> = data.iter().map(|d| d.0).collect();
            let p: Vec<usize> = data.iter().map(|d| d.1).collect();
            let s: Vec<Vec<f64>> = data.iter().map(|d| vec![d.2, 1.0 - d.2, 0.5]).collect();
            let mut idx: Vec<usize> = (0..y.len()).collect();
            crate::numerics::SeededRng::new(seed).shuffle(&mut idx);
            let yp: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let pp: Vec<usize> = idx.iter().map(|&i| p[i]).collect();
            let sp: Vec<Vec<f64>> = idx.iter().map(|&i| s[i].clone()).collect();
            prop_assert_eq!(macro_f1(&y, &p, 3).unwrap(), macro_f1(&yp, &pp, 3).unwrap());
            let a = auroc_ovr(&y, &s, 3).unwrap();
            let b = auroc_ovr(&yp, &sp, 3).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
