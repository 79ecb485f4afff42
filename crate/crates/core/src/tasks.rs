//! Downstream procedures on inferred posteriors.
//!
//! All argmax and ranking operations break ties toward the lowest index.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{FactorLayout, PosteriorRecord, PosteriorSummary};
use crate::error::{Error, Result};

/// An object, where it is, and its ranked attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub object: usize,
    pub object_score: f64,
    /// Patch index `j*`.
    pub patch: usize,
    /// `(attribute factor index, score)`, non-increasing in score.
    pub attributes: Vec<(usize, f64)>,
}

/// How objects are chosen by their presence score (see [`PosteriorSummary::presence`]).
///
/// `E[pi_k]` cannot serve here: it is a running product of stick means and so
/// never increases with `k`, which would always favor the first object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectSelection {
    Top(usize),
    Threshold(f64),
}

fn check_post(post: &PosteriorSummary, layout: &FactorLayout) -> Result<()> {
    if post.nu.cols() != layout.k_max || post.pi_mean.len() != layout.k_max {
        return Err(Error::Layout(format!(
            "posterior has {} factors, layout expects {}",
            post.nu.cols(),
            layout.k_max
        )));
    }
    if post.nu.rows() == 0 {
        return Err(Error::Layout("posterior has no patches".into()));
    }
    Ok(())
}

/// Stable descending order over `scores`, ties to the lower position.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Patch maximizing `nu_{j,k}`.
pub fn locate(post: &PosteriorSummary, k: usize) -> usize {
    let mut best = 0;
    for j in 1..post.nu.rows() {
        if post.nu.get(j, k) > post.nu.get(best, k) {
            best = j;
        }
    }
    best
}

fn rank_attributes(scores: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    descending(&values).into_iter().map(|i| scores[i]).collect()
}

fn annotation_at(post: &PosteriorSummary, layout: &FactorLayout, k: usize, t: usize) -> Annotation {
    let patch = locate(post, k);
    let scores = layout
        .attributes()
        .map(|a| (a, post.nu.get(patch, a)))
        .collect();
    let mut attributes = rank_attributes(scores);
    attributes.truncate(t);
    Annotation {
        object: k,
        object_score: post.presence(k),
        patch,
        attributes,
    }
}

/// Picks objects by presence, locates each, and lists its top-`t` attributes.
pub fn free_annotate(
    post: &PosteriorSummary,
    layout: &FactorLayout,
    select: ObjectSelection,
    t: usize,
) -> Result<Vec<Annotation>> {
    check_post(post, layout)?;
    if t > layout.k_a {
        return Err(Error::Index(format!("t = {t} exceeds k_a = {}", layout.k_a)));
    }
    let presence: Vec<f64> = layout.objects().map(|k| post.presence(k)).collect();
    let order = descending(&presence);
    let chosen: Vec<usize> = match select {
        ObjectSelection::Top(n) => {
            if n > layout.k_o {
                return Err(Error::Index(format!(
                    "requested {n} objects but k_o = {}",
                    layout.k_o
                )));
            }
            order.into_iter().take(n).collect()
        }
        ObjectSelection::Threshold(theta) => order
            .into_iter()
            .filter(|&k| presence[k] >= theta)
            .collect(),
    };
    Ok(chosen
        .into_iter()
        .map(|k| annotation_at(post, layout, k, t))
        .collect())
}

/// Attributes of a named object, ranked at its most likely patch.
pub fn annotate_given_names(
    post: &PosteriorSummary,
    layout: &FactorLayout,
    object: usize,
) -> Result<Annotation> {
    check_post(post, layout)?;
    if !layout.is_object(object) {
        return Err(Error::Index(format!(
            "factor {object} is not an object (k_o = {})",
            layout.k_o
        )));
    }
    Ok(annotation_at(post, layout, object, layout.k_a))
}

/// Attributes scored by their mean assignment over a set of patches.
pub fn attributes_given_location(
    post: &PosteriorSummary,
    layout: &FactorLayout,
    patches: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_post(post, layout)?;
    if patches.is_empty() {
        return Err(Error::Index("patch set is empty".into()));
    }
    let mut seen = BTreeSet::new();
    for &j in patches {
        if j >= post.nu.rows() {
            return Err(Error::Index(format!(
                "patch {j} out of range (bag has {})",
                post.nu.rows()
            )));
        }
        if !seen.insert(j) {
            return Err(Error::Index(format!("patch {j} listed twice")));
        }
    }
    let n = patches.len() as f64;
    let scores = layout
        .attributes()
        .map(|a| (a, patches.iter().map(|&j| post.nu.get(j, a)).sum::<f64>() / n))
        .collect();
    Ok(rank_attributes(scores))
}

/// Object-attribute conjunction evidence: `max_j nu_{j,o} prod_a nu_{j,a}`.
pub fn conjunction_score(post: &PosteriorSummary, object: usize, attrs: &[usize]) -> f64 {
    (0..post.nu.rows())
        .map(|j| {
            attrs
                .iter()
                .fold(post.nu.get(j, object), |acc, &a| acc * post.nu.get(j, a))
        })
        .fold(0.0, f64::max)
}

/// Conjunction query over a corpus; descending scores, ties by id.
pub fn query(
    corpus: &[PosteriorRecord],
    layout: &FactorLayout,
    object: usize,
    attrs: &[usize],
) -> Result<Vec<(String, f64)>> {
    if !layout.is_object(object) {
        return Err(Error::Index(format!("factor {object} is not an object")));
    }
    if let Some(a) = attrs.iter().find(|&&a| !layout.is_attribute(a)) {
        return Err(Error::Index(format!("factor {a} is not an attribute")));
    }
    let mut ranking = corpus
        .iter()
        .map(|r| {
            check_post(&r.post, layout)?;
            Ok((r.id.clone(), conjunction_score(&r.post, object, attrs)))
        })
        .collect::<Result<Vec<_>>>()?;
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranking)
}

// ---------------------------------------------------------------------------
// Output records.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIndex {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub object: usize,
    pub object_score: f64,
    pub patch: usize,
    pub attributes: Vec<ScoredIndex>,
}

impl AnnotationRecord {
    pub fn new(id: &str, a: &Annotation) -> Self {
        Self {
            id: id.to_string(),
            object: a.object,
            object_score: a.object_score,
            patch: a.patch,
            attributes: a
                .attributes
                .iter()
                .map(|&(index, score)| ScoredIndex { index, score })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub object: usize,
    pub attrs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedId {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: QuerySpec,
    pub ranking: Vec<RankedId>,
}
