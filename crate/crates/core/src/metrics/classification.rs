use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVector, NUM_CLASSES};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("scores contain NaN"));
    }
    Ok(())
}

/// Mann-Whitney AUROC: share of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::undefined(
            "auroc",
            format!("needs both classes, got {pos} positive and {neg} negative"),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // twice the Mann-Whitney U, kept integral
    let (mut u2, mut neg_below) = (0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let p = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        let n = (end - start) as u64 - p;
        u2 += p * (2 * neg_below + n);
        neg_below += n;
        start = end;
    }
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over the ranking by
/// descending score, ties kept in input order.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::undefined("auprc", "no positive examples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let (mut hits, mut ap) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMetric {
    Auroc,
    Auprc,
}

impl ClassMetric {
    pub fn name(self) -> &'static str {
        match self {
            ClassMetric::Auroc => "AUROC",
            ClassMetric::Auprc => "AUPRC",
        }
    }

    pub fn eval(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            ClassMetric::Auroc => auroc(scores, labels),
            ClassMetric::Auprc => auprc(scores, labels),
        }
    }
}

/// Per-class values and their mean over non-degenerate classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroResult {
    pub metric: ClassMetric,
    /// `None` for classes without both a positive and a negative.
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl MacroResult {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&d| self.per_class[d].is_none())
            .collect()
    }
}

/// Macro average over classes; uncertain labels are left out per class.
pub fn macro_average(probs: &[Vec<f64>], labels: &[LabelVector], metric: ClassMetric) -> Result<MacroResult> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} label vectors",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| p.len() != NUM_CLASSES) {
        return Err(Error::contract(format!(
            "prediction has {} entries, expected {NUM_CLASSES}",
            p.len()
        )));
    }
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    for d in 0..NUM_CLASSES {
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for (p, y) in probs.iter().zip(labels) {
            if let Some(t) = y.get(d).target() {
                s.push(p[d]);
                l.push(t == 1.0);
            }
        }
        let degenerate = l.iter().all(|&x| x) || l.iter().all(|&x| !x);
        per_class.push(if degenerate { None } else { Some(metric.eval(&s, &l)?) });
    }
    let vals: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    Ok(MacroResult {
        metric,
        per_class,
        mean,
    })
}

/// `|a - b| / a * 100`, the relative change of `b` against baseline `a`.
pub fn improvement_pct(a: f64, b: f64) -> f64 {
    (a - b).abs() / a * 100.0
}
