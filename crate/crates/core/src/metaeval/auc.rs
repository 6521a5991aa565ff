use crate::error::{Error, Result};
use crate::stats::harmonic_mean;
use crate::types::Label;

/// ROC AUC as the Mann-Whitney statistic: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::domain(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    let n_pos = labels.iter().filter(|l| l.is_pos()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks (1-based) summed over positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k].is_pos()).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Like [`roc_auc`] but `None` for single-class inputs.
pub fn roc_auc_opt(scores: &[f64], labels: &[Label]) -> Option<f64> {
    roc_auc(scores, labels).ok()
}

pub fn unified_auc(ta_auc: f64, sp_auc: f64) -> Result<f64> {
    harmonic_mean(ta_auc, sp_auc)
}
