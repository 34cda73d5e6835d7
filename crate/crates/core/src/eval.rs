//! Statistical and financial evaluation: ROC AUC, example-dependent cost,
//! savings against the cheaper constant classifier, and permutation
//! importance.
//!
//! The positive class (1) is a defaulter everywhere. Per example, missing a
//! defaulter costs `Cl_i · L_gd` and declining a good payer costs
//! `r_i + C^a_FP`; correct decisions cost nothing.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::table::FeatureMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("label at index {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("cost of the costless class is zero; savings undefined")]
    ZeroBaselineCost,
    #[error("invalid cost fields: {0}")]
    BadCostFields(String),
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), EvalError> {
    if got != expected {
        return Err(EvalError::LengthMismatch { what, got, expected });
    }
    Ok(())
}

fn check_labels(labels: &[u8]) -> Result<(usize, usize), EvalError> {
    let mut pos = 0;
    for (i, &y) in labels.iter().enumerate() {
        match y {
            0 => {}
            1 => pos += 1,
            _ => return Err(EvalError::BadLabel(i)),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the normalized Mann-Whitney U statistic, with
/// tied scores sharing their mid-rank.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check_len("labels", labels.len(), scores.len())?;
    let (pos, neg) = check_labels(labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += mid * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-example cost inputs plus the two global cost parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFields {
    pub credit_line: Vec<f64>,
    pub profit: Vec<f64>,
    /// Loss given default, in (0, 1].
    pub lgd: f64,
    /// Alternative cost of declining a good payer, in currency units.
    pub alt_cost_fp: f64,
}

impl CostFields {
    /// Builds cost fields; `alt_cost_fp` defaults to the median profit.
    pub fn new(credit_line: Vec<f64>, profit: Vec<f64>, lgd: f64, alt_cost_fp: Option<f64>) -> Result<Self, EvalError> {
        check_len("profit", profit.len(), credit_line.len())?;
        let alt_cost_fp = alt_cost_fp.unwrap_or_else(|| median(&profit));
        let f = Self { credit_line, profit, lgd, alt_cost_fp };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        check_len("profit", self.profit.len(), self.credit_line.len())?;
        if !(self.lgd > 0.0 && self.lgd <= 1.0) {
            return Err(EvalError::BadCostFields(format!("lgd {} outside (0, 1]", self.lgd)));
        }
        if !(self.alt_cost_fp >= 0.0 && self.alt_cost_fp.is_finite()) {
            return Err(EvalError::BadCostFields(format!("alternative cost {}", self.alt_cost_fp)));
        }
        if let Some(i) = self.credit_line.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(EvalError::BadCostFields(format!("credit line at {i} is not positive")));
        }
        if let Some(i) = self.profit.iter().position(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(EvalError::BadCostFields(format!("profit at {i} is negative")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.credit_line.len()
    }

    pub fn is_empty(&self) -> bool {
        self.credit_line.is_empty()
    }

    /// Rows `idx`, keeping the global parameters.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            credit_line: idx.iter().map(|&i| self.credit_line[i]).collect(),
            profit: idx.iter().map(|&i| self.profit[i]).collect(),
            lgd: self.lgd,
            alt_cost_fp: self.alt_cost_fp,
        }
    }

    pub fn false_negative_cost(&self, i: usize) -> f64 {
        self.credit_line[i] * self.lgd
    }

    pub fn false_positive_cost(&self, i: usize) -> f64 {
        self.profit[i] + self.alt_cost_fp
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Total example-dependent cost of hard predictions.
pub fn total_cost(predicted: &[u8], labels: &[u8], fields: &CostFields) -> Result<f64, EvalError> {
    check_len("labels", labels.len(), predicted.len())?;
    check_len("cost fields", fields.len(), predicted.len())?;
    let mut cost = 0.0;
    for (i, (&c, &y)) in predicted.iter().zip(labels).enumerate() {
        if c > 1 || y > 1 {
            return Err(EvalError::BadLabel(i));
        }
        match (c, y) {
            (0, 1) => cost += fields.false_negative_cost(i),
            (1, 0) => cost += fields.false_positive_cost(i),
            _ => {}
        }
    }
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub cost: f64,
    /// Cost of the cheaper constant classifier.
    pub cost_baseline: f64,
    pub savings: f64,
    pub threshold: f64,
    pub lgd: f64,
    pub alt_cost_fp: f64,
}

fn baseline_cost(labels: &[u8], fields: &CostFields) -> Result<f64, EvalError> {
    let n = labels.len();
    let all_neg = total_cost(&vec![0; n], labels, fields)?;
    let all_pos = total_cost(&vec![1; n], labels, fields)?;
    Ok(all_neg.min(all_pos))
}

fn report(
    scores: &[f64],
    labels: &[u8],
    fields: &CostFields,
    threshold: f64,
    cost: f64,
) -> Result<MetricReport, EvalError> {
    let cost_baseline = baseline_cost(labels, fields)?;
    if cost_baseline <= 0.0 {
        return Err(EvalError::ZeroBaselineCost);
    }
    Ok(MetricReport {
        auc: auc(scores, labels)?,
        cost,
        cost_baseline,
        savings: (cost_baseline - cost) / cost_baseline,
        threshold,
        lgd: fields.lgd,
        alt_cost_fp: fields.alt_cost_fp,
    })
}

/// Hard predictions: positive iff `score >= threshold`.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

/// AUC, cost and savings of `scores` thresholded at `threshold`.
pub fn savings(scores: &[f64], labels: &[u8], fields: &CostFields, threshold: f64) -> Result<MetricReport, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    check_len("labels", labels.len(), scores.len())?;
    let cost = total_cost(&classify(scores, threshold), labels, fields)?;
    report(scores, labels, fields, threshold, cost)
}

/// Like [`savings`], with the threshold chosen among the distinct scores (and
/// "predict nothing", reported as threshold `f64::MAX`) to minimize total
/// cost. Ties go to the higher threshold.
pub fn savings_at_min_cost(scores: &[f64], labels: &[u8], fields: &CostFields) -> Result<MetricReport, EvalError> {
    check_len("labels", labels.len(), scores.len())?;
    check_len("cost fields", fields.len(), scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // start from "all negative" and flip examples to positive in score order
    let mut cost: f64 =
        labels.iter().enumerate().filter(|(_, &y)| y == 1).map(|(i, _)| fields.false_negative_cost(i)).sum();
    let mut best = (cost, f64::MAX);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            let k = order[i];
            if labels[k] == 1 {
                cost -= fields.false_negative_cost(k);
            } else {
                cost += fields.false_positive_cost(k);
            }
            i += 1;
        }
        if cost < best.0 {
            best = (cost, s);
        }
    }
    // recompute exactly for the chosen threshold
    let cost = total_cost(&classify(scores, best.1), labels, fields)?;
    report(scores, labels, fields, best.1, cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean AUC drop over the shuffles.
    pub importance: f64,
    pub std: f64,
}

/// Permutation importance: mean AUC drop when one column is shuffled, over
/// `n_repeats` independent shuffles. Sorted by decreasing importance, ties by
/// column order.
pub fn permutation_importance<F>(
    predict: F,
    x: &FeatureMatrix,
    labels: &[u8],
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>, EvalError>
where
    F: Fn(&FeatureMatrix) -> Vec<f64>,
{
    check_len("labels", labels.len(), x.n_rows())?;
    let base = auc(&predict(x), labels)?;
    let mut out = Vec::with_capacity(x.n_cols());
    let mut work = x.clone();
    for j in 0..x.n_cols() {
        let mut r = rng::stream(seed, x.names()[j].as_str());
        let mut drops = Vec::with_capacity(n_repeats);
        for _ in 0..n_repeats {
            work.column_mut(j).shuffle(&mut r);
            drops.push(base - auc(&predict(&work), labels)?);
        }
        work.column_mut(j).copy_from_slice(x.column(j));
        let (mean, std) = mean_std(&drops);
        out.push(FeatureImportance { feature: x.names()[j].clone(), importance: mean, std });
    }
    out.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    Ok(out)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
