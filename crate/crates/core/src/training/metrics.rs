use serde::Serialize;

use crate::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney rank statistic.
///
/// Tied scores get their average rank, so a tied positive/negative pair
/// counts one half. The numerator is kept in integer half-units, which makes
/// the result identical to exhaustive pair counting.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "roc_auc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC-AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of the positives; ranks are 1-based.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average rank of the tie group (i+1 ..= j+1), doubled.
        let twice_avg = (i + 1 + j + 1) as u64;
        let positives = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += twice_avg * positives;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn classification_accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Dimension {
            op: "classification_accuracy",
            left: vec![predicted.len()],
            right: vec![labels.len()],
        });
    }
    if predicted.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Balanced weights `total / (C · count_c)` from training labels. A class
/// missing from the training labels is weighted as if it occurred once.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
        .iter()
        .map(|&c| labels.len() as f64 / (n_classes as f64 * c.max(1) as f64))
        .collect()
}

/// Splits indices `0..lengths.len()` into `n_bins` equal-count groups in
/// order of increasing length (ties by index). The first `n % n_bins`
/// groups take one extra member. Fewer items than bins gives one bin each.
pub fn percentile_bins(lengths: &[usize], n_bins: usize) -> Result<Vec<Vec<usize>>> {
    if lengths.is_empty() {
        return Err(Error::UndefinedMetric("percentile report of an empty split".into()));
    }
    if n_bins == 0 {
        return Err(Error::Parameter("at least one percentile bin".into()));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let bins = n_bins.min(order.len());
    let (base, extra) = (order.len() / bins, order.len() % bins);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub min_len: usize,
    pub max_len: usize,
    pub count: usize,
    pub value: f64,
}

/// Applies `metric` to every length-percentile bin.
pub fn percentile_report<F>(lengths: &[usize], n_bins: usize, metric: F) -> Result<Vec<BinReport>>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    percentile_bins(lengths, n_bins)?
        .into_iter()
        .map(|bin| {
            Ok(BinReport {
                min_len: lengths[bin[0]],
                max_len: lengths[*bin.last().unwrap()],
                count: bin.len(),
                value: metric(&bin)?,
            })
        })
        .collect()
}
