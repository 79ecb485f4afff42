//! Ranking metrics: AP@t for free annotation, area-under-PR average precision,
//! and mean average recall over a precision grid.
//!
//! Score ties are broken by item index (earlier item ranks first).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Ranked relevance flags with precision and recall at every cut-off.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub relevant: Vec<bool>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl PrCurve {
    /// `total_relevant` may exceed the relevant flags present (unretrieved positives).
    pub fn from_flags(relevant: Vec<bool>, total_relevant: usize) -> Self {
        let mut precision = Vec::with_capacity(relevant.len());
        let mut recall = Vec::with_capacity(relevant.len());
        let mut hits = 0usize;
        for (r, &rel) in relevant.iter().enumerate() {
            hits += usize::from(rel);
            precision.push(hits as f64 / (r + 1) as f64);
            recall.push(if total_relevant == 0 {
                0.0
            } else {
                hits as f64 / total_relevant as f64
            });
        }
        Self {
            relevant,
            precision,
            recall,
        }
    }

    pub fn from_scores(scores: &[f64], truth: &[bool]) -> Result<Self> {
        let order = rank_order(scores)?;
        if truth.len() != scores.len() {
            return Err(Error::Metric(format!(
                "{} scores but {} truth flags",
                scores.len(),
                truth.len()
            )));
        }
        let flags: Vec<bool> = order.iter().map(|&i| truth[i]).collect();
        let total = truth.iter().filter(|&&t| t).count();
        Ok(Self::from_flags(flags, total))
    }

    /// Interpolation-free average precision: mean of precision at each relevant rank.
    pub fn average_precision(&self) -> f64 {
        let total = self.relevant.iter().filter(|&&r| r).count();
        if total == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .relevant
            .iter()
            .zip(&self.precision)
            .filter(|(&r, _)| r)
            .map(|(_, p)| p)
            .sum();
        sum / total as f64
    }
}

/// Indices sorted by descending score, ties to the lower index.
pub fn rank_order(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(idx)
}

/// Average precision of one score vector against binary truth.
pub fn pr_map(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if !truth.iter().any(|&t| t) {
        return Err(Error::Metric("average precision needs at least one positive".into()));
    }
    Ok(PrCurve::from_scores(scores, truth)?.average_precision())
}

/// Macro average of [`pr_map`] over columns (attributes) that have positives.
pub fn macro_map(columns: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    let aps: Vec<f64> = columns
        .iter()
        .filter(|(_, t)| t.iter().any(|&x| x))
        .map(|(s, t)| pr_map(s, t))
        .collect::<Result<_>>()?;
    if aps.is_empty() {
        return Err(Error::Metric("no column has a positive example".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Predicted object with its ranked attribute list.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationPrediction {
    pub object: usize,
    pub attributes: Vec<usize>,
}

/// Objects present in an image, each with its associated attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationTruth {
    pub objects: BTreeMap<usize, BTreeSet<usize>>,
}

/// Per-image AP of the top-`t` attributes, normalized by `min(t, |truth|)`;
/// a wrong object scores 0.
pub fn image_ap_at_t(pred: &AnnotationPrediction, truth: &AnnotationTruth, t: usize) -> f64 {
    let Some(relevant) = truth.objects.get(&pred.object) else {
        return 0.0;
    };
    let denom = t.min(relevant.len());
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, a) in pred.attributes.iter().take(t).enumerate() {
        if relevant.contains(a) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / denom as f64
}

pub fn ap_at_t(
    predictions: &[(String, AnnotationPrediction)],
    truth: &BTreeMap<String, AnnotationTruth>,
    t: usize,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::Metric("t must be at least 1".into()));
    }
    if predictions.is_empty() {
        return Err(Error::Metric("no predictions".into()));
    }
    let mut total = 0.0;
    for (id, pred) in predictions {
        let tr = truth
            .get(id)
            .ok_or_else(|| Error::Metric(format!("no ground truth for image `{id}`")))?;
        total += image_ap_at_t(pred, tr, t);
    }
    Ok(total / predictions.len() as f64)
}

/// Default precision grid `{0.1, 0.2, ..., 1.0}`.
pub fn default_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Average over the grid of the best recall reached at precision `>= p`.
pub fn average_recall(relevant: &[bool], grid: &[f64]) -> f64 {
    let total = relevant.iter().filter(|&&r| r).count();
    let curve = PrCurve::from_flags(relevant.to_vec(), total);
    let sum: f64 = grid
        .iter()
        .map(|&p| {
            curve
                .precision
                .iter()
                .zip(&curve.recall)
                .filter(|(&prec, _)| prec >= p)
                .map(|(_, &rec)| rec)
                .fold(0.0, f64::max)
        })
        .sum();
    sum / grid.len() as f64
}

/// Mean average recall over queries; each ranking lists relevance flags in rank order.
pub fn mar(rankings: &[Vec<bool>], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() || grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Metric("precision grid must be non-empty within (0, 1]".into()));
    }
    if rankings.is_empty() || rankings.iter().any(Vec::is_empty) {
        return Err(Error::Metric("empty ranking".into()));
    }
    let sum: f64 = rankings.iter().map(|r| average_recall(r, grid)).sum();
    Ok(sum / rankings.len() as f64)
}
