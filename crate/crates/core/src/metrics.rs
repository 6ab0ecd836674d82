//! Accuracy, per-attribute unfairness, the search reward and the two-model
//! disagreement breakdown.
//!
//! Predictions are aligned with an index set ("split") into the dataset:
//! `predicted[j]` is the prediction for sample `split[j]`.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default clamp for reward denominators.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predictions(pub Vec<usize>);

impl Predictions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, num_classes: usize) -> Result<()> {
        match self.0.iter().find(|&&c| c >= num_classes) {
            Some(c) => Err(Error::Invalid(format!(
                "predicted class {c} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }
}

/// Fraction of `subset` (or of all positions) where `predicted == labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize], subset: Option<&[usize]>) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let (hits, total) = match subset {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= labels.len()) {
                return Err(Error::Invalid(format!("subset index {bad} out of range")));
            }
            let hits = idx.iter().filter(|&&i| predicted[i] == labels[i]).count();
            (hits, idx.len())
        }
        None => {
            let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
            (hits, labels.len())
        }
    };
    if total == 0 {
        return Err(Error::EmptyGroup);
    }
    Ok(hits as f64 / total as f64)
}

/// Correct/total tallies per group of one attribute over a split.
fn group_tallies(
    predictions: &Predictions,
    dataset: &Dataset,
    split: &[usize],
    attr: usize,
) -> Vec<(usize, usize)> {
    let mut tallies = vec![(0usize, 0usize); dataset.schema.attributes[attr].groups.len()];
    for (&i, &p) in split.iter().zip(&predictions.0) {
        let s = &dataset.samples[i];
        let t = &mut tallies[s.groups[attr]];
        t.1 += 1;
        if p == s.label {
            t.0 += 1;
        }
    }
    tallies
}

fn check_aligned(predictions: &Predictions, split: &[usize], dataset: &Dataset) -> Result<()> {
    if predictions.len() != split.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for a split of {} samples",
            predictions.len(),
            split.len()
        )));
    }
    if let Some(&bad) = split.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Invalid(format!("split index {bad} out of range")));
    }
    Ok(())
}

fn unfairness_from_tallies(tallies: &[(usize, usize)]) -> Result<f64> {
    let (hits, total) = tallies
        .iter()
        .fold((0, 0), |(h, t), &(gh, gt)| (h + gh, t + gt));
    if total == 0 {
        return Err(Error::EmptyGroup);
    }
    let overall = hits as f64 / total as f64;
    Ok(tallies
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|&(h, n)| (h as f64 / n as f64 - overall).abs())
        .sum())
}

/// L1 deviation of group accuracies from the split-wide accuracy for one
/// attribute. Groups with no members in the split are skipped.
pub fn unfairness(
    predictions: &Predictions,
    dataset: &Dataset,
    split: &[usize],
    attribute: &str,
) -> Result<f64> {
    let attr = dataset
        .schema
        .attribute_index(attribute)
        .ok_or_else(|| Error::Invalid(format!("attribute '{attribute}' not in schema")))?;
    check_aligned(predictions, split, dataset)?;
    unfairness_from_tallies(&group_tallies(predictions, dataset, split, attr))
}

pub fn multi_unfairness(per_attribute: &IndexMap<String, f64>) -> f64 {
    per_attribute.values().sum()
}

/// `sum_k A / max(U_k, epsilon)`.
pub fn reward(
    overall_accuracy: f64,
    per_attribute: &IndexMap<String, f64>,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(overall_accuracy >= 0.0) {
        return Err(Error::Invalid(format!(
            "accuracy must be non-negative, got {overall_accuracy}"
        )));
    }
    let mut total = 0.0;
    for (name, &u) in per_attribute {
        if !(u >= 0.0) {
            return Err(Error::Invalid(format!(
                "unfairness of '{name}' must be non-negative, got {u}"
            )));
        }
        total += overall_accuracy / u.max(epsilon);
    }
    Ok(total)
}

/// Joint correctness of two models over a subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub both_wrong: f64,
    pub only_a: f64,
    pub only_b: f64,
    pub both_right: f64,
}

impl Breakdown {
    pub fn disagreement(&self) -> f64 {
        self.only_a + self.only_b
    }
}

/// `subset` indexes the aligned `model_a`/`model_b`/`labels` slices.
pub fn disagreement_breakdown(
    model_a: &[usize],
    model_b: &[usize],
    labels: &[usize],
    subset: &[usize],
) -> Result<Breakdown> {
    if model_a.len() != labels.len() || model_b.len() != labels.len() {
        return Err(Error::Invalid("breakdown inputs are not aligned".into()));
    }
    if subset.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut counts = [0usize; 4];
    for &i in subset {
        if i >= labels.len() {
            return Err(Error::Invalid(format!("subset index {i} out of range")));
        }
        let a = (model_a[i] == labels[i]) as usize;
        let b = (model_b[i] == labels[i]) as usize;
        counts[a * 2 + b] += 1;
    }
    let n = subset.len() as f64;
    Ok(Breakdown {
        both_wrong: counts[0] as f64 / n,
        only_b: counts[1] as f64 / n,
        only_a: counts[2] as f64 / n,
        both_right: counts[3] as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub attribute: String,
    pub group: String,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub overall_accuracy: f64,
    /// Keyed by attribute name, in schema order.
    pub per_attribute_unfairness: IndexMap<String, f64>,
    pub multi_unfairness: f64,
    pub reward: f64,
    /// Groups with at least one member in the evaluated split.
    pub per_group_accuracy: Vec<GroupAccuracy>,
}

impl FairnessReport {
    pub fn unfairness(&self, attribute: &str) -> Option<f64> {
        self.per_attribute_unfairness.get(attribute).copied()
    }

    pub fn group_accuracy(&self, attribute: &str, group: &str) -> Option<f64> {
        self.per_group_accuracy
            .iter()
            .find(|g| g.attribute == attribute && g.group == group)
            .map(|g| g.accuracy)
    }
}

/// Accuracy, every attribute's unfairness, their sum and the reward over one
/// split.
pub fn full_report(
    predictions: &Predictions,
    dataset: &Dataset,
    split: &[usize],
    epsilon: f64,
) -> Result<FairnessReport> {
    check_aligned(predictions, split, dataset)?;
    predictions.check(dataset.num_classes)?;
    if split.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let hits = split
        .iter()
        .zip(&predictions.0)
        .filter(|(&i, &p)| dataset.samples[i].label == p)
        .count();
    let overall_accuracy = hits as f64 / split.len() as f64;

    let mut per_attribute_unfairness = IndexMap::new();
    let mut per_group_accuracy = Vec::new();
    for (k, attr) in dataset.schema.attributes.iter().enumerate() {
        let tallies = group_tallies(predictions, dataset, split, k);
        per_attribute_unfairness.insert(attr.name.clone(), unfairness_from_tallies(&tallies)?);
        for (g, &(h, n)) in tallies.iter().enumerate() {
            if n > 0 {
                per_group_accuracy.push(GroupAccuracy {
                    attribute: attr.name.clone(),
                    group: attr.groups[g].clone(),
                    count: n,
                    accuracy: h as f64 / n as f64,
                });
            }
        }
    }
    let multi_unfairness = multi_unfairness(&per_attribute_unfairness);
    let reward = reward(overall_accuracy, &per_attribute_unfairness, epsilon)?;
    Ok(FairnessReport {
        overall_accuracy,
        per_attribute_unfairness,
        multi_unfairness,
        reward,
        per_group_accuracy,
    })
}
