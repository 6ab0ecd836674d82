//! Unprivileged-group detection, per-sample and per-group weights, and the
//! weighted proxy dataset the fusion head trains on.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelPool};
use crate::error::{Error, Result};
use crate::fmt;

/// Flagged groups per attribute (schema order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnprivilegedMap {
    /// `groups[k]` holds the flagged group indices of attribute `k`.
    pub groups: Vec<BTreeSet<usize>>,
    /// Mean accuracy over the basis models on the evaluated split.
    pub basis_accuracy: f64,
    pub margin: f64,
}

impl UnprivilegedMap {
    pub fn is_flagged(&self, attr: usize, group: usize) -> bool {
        self.groups[attr].contains(&group)
    }

    pub fn is_empty(&self) -> bool {
        self.groups.iter().all(BTreeSet::is_empty)
    }

    /// `(attribute, group)` index pairs of every flagged group.
    pub fn flagged(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(k, gs)| gs.iter().map(move |&g| (k, g)))
    }

    /// Whether sample `i` belongs to at least one flagged group.
    pub fn contains_sample(&self, dataset: &Dataset, i: usize) -> bool {
        dataset.samples[i]
            .groups
            .iter()
            .enumerate()
            .any(|(k, &g)| self.is_flagged(k, g))
    }

    pub fn describe(&self, dataset: &Dataset) -> Vec<(String, String)> {
        self.flagged()
            .map(|(k, g)| {
                let attr = &dataset.schema.attributes[k];
                (attr.name.clone(), attr.groups[g].clone())
            })
            .collect()
    }
}

/// Flags every group whose mean accuracy across all pool models on `split`
/// falls below the pool-mean accuracy minus `margin`.
pub fn identify_unprivileged(
    dataset: &Dataset,
    pool: &ModelPool,
    split: &[usize],
    margin: f64,
    exclude_unknown: bool,
) -> Result<UnprivilegedMap> {
    let all: Vec<usize> = (0..pool.len()).collect();
    identify_unprivileged_with(dataset, pool, &all, split, margin, exclude_unknown)
}

/// As [`identify_unprivileged`], averaging over the `models` subset only.
pub fn identify_unprivileged_with(
    dataset: &Dataset,
    pool: &ModelPool,
    models: &[usize],
    split: &[usize],
    margin: f64,
    exclude_unknown: bool,
) -> Result<UnprivilegedMap> {
    if models.is_empty() {
        return Err(Error::Invalid("no models to average over".into()));
    }
    if let Some(&bad) = models.iter().find(|&&m| m >= pool.len()) {
        return Err(Error::Invalid(format!("model index {bad} out of range")));
    }
    if !(margin >= 0.0) {
        return Err(Error::Invalid(format!("margin must be non-negative, got {margin}")));
    }
    if split.is_empty() {
        return Err(Error::EmptyGroup);
    }

    // correct[i] = number of basis models correct on split[i]
    let correct: Vec<usize> = split
        .iter()
        .map(|&i| {
            let label = dataset.samples[i].label;
            models
                .iter()
                .filter(|&&m| pool.entries[m].predict(i) == label)
                .count()
        })
        .collect();
    let n_models = models.len() as f64;
    let basis_accuracy = correct.iter().sum::<usize>() as f64 / (split.len() as f64 * n_models);

    let mut groups = Vec::with_capacity(dataset.schema.len());
    for (k, attr) in dataset.schema.attributes.iter().enumerate() {
        let mut tallies = vec![(0usize, 0usize); attr.groups.len()];
        for (&i, &c) in split.iter().zip(&correct) {
            let t = &mut tallies[dataset.samples[i].groups[k]];
            t.0 += c;
            t.1 += 1;
        }
        let unknown = if exclude_unknown { attr.unknown_index() } else { None };
        let flagged = tallies
            .iter()
            .enumerate()
            .filter(|&(g, &(_, n))| n > 0 && Some(g) != unknown)
            .filter(|&(_, &(c, n))| (c as f64 / (n as f64 * n_models)) < basis_accuracy - margin)
            .map(|(g, _)| g)
            .collect();
        groups.push(flagged);
    }
    Ok(UnprivilegedMap {
        groups,
        basis_accuracy,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeight {
    pub attribute: usize,
    pub group: usize,
    pub members: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    /// Per-sample count of flagged groups containing it, aligned with
    /// `Dataset::samples`. Samples outside the training split stay 0.
    pub sample_weight: Vec<u32>,
    pub group_weight: Vec<GroupWeight>,
}

impl WeightTable {
    pub fn group(&self, attribute: usize, group: usize) -> Option<f64> {
        self.group_weight
            .iter()
            .find(|w| w.attribute == attribute && w.group == group)
            .map(|w| w.weight)
    }

    /// `attribute,group,weight` rows.
    pub fn group_csv(&self, dataset: &Dataset) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attribute", "group", "weight"])?;
        for gw in &self.group_weight {
            let attr = &dataset.schema.attributes[gw.attribute];
            w.write_record([
                attr.name.as_str(),
                attr.groups[gw.group].as_str(),
                fmt::real(gw.weight).as_str(),
            ])?;
        }
        into_string(w)
    }

    /// `sample_id,weight` rows for the training split.
    pub fn sample_csv(&self, dataset: &Dataset, train: &[usize]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "weight"])?;
        for &i in train {
            w.write_record([
                dataset.samples[i].sample_id.as_str(),
                self.sample_weight[i].to_string().as_str(),
            ])?;
        }
        into_string(w)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Two passes over the flagged groups: each sample counts the flagged groups
/// it belongs to, then each group takes the mean count of its training
/// members.
pub fn compute_weights(
    dataset: &Dataset,
    train: &[usize],
    unpriv: &UnprivilegedMap,
) -> Result<WeightTable> {
    if unpriv.groups.len() != dataset.schema.len() {
        return Err(Error::Invalid(
            "unprivileged map does not match the dataset schema".into(),
        ));
    }
    let mut sample_weight = vec![0u32; dataset.len()];
    for (k, g) in unpriv.flagged() {
        for &i in train {
            if dataset.samples[i].groups[k] == g {
                sample_weight[i] += 1;
            }
        }
    }
    let mut group_weight = Vec::new();
    for (k, g) in unpriv.flagged() {
        let members = dataset.members(k, g, train);
        if members.is_empty() {
            let attr = &dataset.schema.attributes[k];
            return Err(Error::Invalid(format!(
                "unprivileged group '{}' of '{}' has no training samples",
                attr.groups[g], attr.name
            )));
        }
        let total: u64 = members.iter().map(|&i| u64::from(sample_weight[i])).sum();
        group_weight.push(GroupWeight {
            attribute: k,
            group: g,
            members: members.len(),
            weight: total as f64 / members.len() as f64,
        });
    }
    Ok(WeightTable {
        sample_weight,
        group_weight,
    })
}

/// One training record for the fusion head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySample {
    pub sample: usize,
    pub sample_id: String,
    /// Selected models' probability rows, concatenated in selection order.
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

fn check_selected(pool: &ModelPool, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::Invalid("no models selected".into()));
    }
    match selected.iter().find(|&&m| m >= pool.len()) {
        Some(m) => Err(Error::Invalid(format!(
            "selected model {m} out of range for a pool of {}",
            pool.len()
        ))),
        None => Ok(()),
    }
}

fn record(dataset: &Dataset, pool: &ModelPool, selected: &[usize], i: usize, weight: f64) -> ProxySample {
    let m = dataset.num_classes;
    let mut input = Vec::with_capacity(selected.len() * m);
    for &j in selected {
        input.extend_from_slice(pool.entries[j].row(i));
    }
    let mut target = vec![0.0; m];
    target[dataset.samples[i].label] = 1.0;
    ProxySample {
        sample: i,
        sample_id: dataset.samples[i].sample_id.clone(),
        input,
        target,
        weight,
    }
}

/// Training-split members of at least one flagged group, each weighted by the
/// largest group weight among its flagged memberships.
pub fn build_proxy(
    dataset: &Dataset,
    pool: &ModelPool,
    selected: &[usize],
    train: &[usize],
    unpriv: &UnprivilegedMap,
    weights: &WeightTable,
) -> Result<Vec<ProxySample>> {
    check_selected(pool, selected)?;
    let mut out = Vec::new();
    for &i in train {
        let weight = dataset.samples[i]
            .groups
            .iter()
            .enumerate()
            .filter(|&(k, &g)| unpriv.is_flagged(k, g))
            .filter_map(|(k, &g)| weights.group(k, g))
            .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))));
        if let Some(weight) = weight {
            out.push(record(dataset, pool, selected, i, weight));
        }
    }
    Ok(out)
}

/// Every training sample with weight 1 (the unweighted ablation).
pub fn build_uniform_proxy(
    dataset: &Dataset,
    pool: &ModelPool,
    selected: &[usize],
    train: &[usize],
) -> Result<Vec<ProxySample>> {
    check_selected(pool, selected)?;
    Ok(train
        .iter()
        .map(|&i| record(dataset, pool, selected, i, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Attribute, AttributeSchema, LabeledSample, ModelEntry, ScoreKind};

    /// Samples: (age, site). age: young=0/old=1, site: head=0/hand=1.
    fn dataset(groups: &[(usize, usize)]) -> Dataset {
        let schema = AttributeSchema::new(vec![
            Attribute {
                name: "age".into(),
                groups: vec!["young".into(), "old".into()],
                unknown_group: None,
            },
            Attribute {
                name: "site".into(),
                groups: vec!["head".into(), "hand".into(), "unknown".into()],
                unknown_group: Some("unknown".into()),
            },
        ])
        .unwrap();
        let samples = groups
            .iter()
            .enumerate()
            .map(|(i, &(a, s))| LabeledSample {
                sample_id: format!("s{i}"),
                label: 0,
                groups: vec![a, s],
            })
            .collect();
        Dataset::new(schema, 3, samples).unwrap()
    }

    fn model(name: &str, correct: &[bool]) -> ModelEntry {
        let rows = correct
            .iter()
            .map(|&c| if c { vec![0.8, 0.1, 0.1] } else { vec![0.1, 0.8, 0.1] })
            .collect();
        ModelEntry::from_rows(name, ScoreKind::Probability, 3, rows, None).unwrap()
    }

    fn flag(sets: &[&[usize]]) -> UnprivilegedMap {
        UnprivilegedMap {
            groups: sets.iter().map(|s| s.iter().copied().collect()).collect(),
            basis_accuracy: 0.0,
            margin: 0.0,
        }
    }

    #[test]
    fn flags_below_mean_groups() {
        // 10 young, 10 old; young: A 9/10, B 9/10; old: A 5/10, B 5/10
        let groups: Vec<(usize, usize)> = (0..20).map(|i| (i / 10, 0)).collect();
        let ds = dataset(&groups);
        let correct: Vec<bool> = (0..20).map(|i| if i < 10 { i < 9 } else { i < 15 }).collect();
        let pool = ModelPool::new(vec![model("a", &correct), model("b", &correct)], &ds).unwrap();
        let all = ds.all_indices();
        let u = identify_unprivileged(&ds, &pool, &all, 0.0, true).unwrap();
        assert!((u.basis_accuracy - 0.7).abs() < 1e-12);
        assert_eq!(u.describe(&ds), vec![("age".to_string(), "old".to_string())]);
        assert!(identify_unprivileged(&ds, &pool, &all, 0.3, true).unwrap().is_empty());
    }

    #[test]
    fn no_flags_when_uniform() {
        let groups: Vec<(usize, usize)> = (0..8).map(|i| (i % 2, i % 2)).collect();
        let ds = dataset(&groups);
        let correct: Vec<bool> = (0..8).map(|i| i < 4).collect();
        let pool = ModelPool::new(vec![model("a", &correct), model("b", &correct)], &ds).unwrap();
        let u = identify_unprivileged(&ds, &pool, &ds.all_indices(), 0.0, true).unwrap();
        assert!(u.is_empty());
    }

    #[test]
    fn unknown_group_excluded() {
        // unknown site group is clearly worse but never flagged when excluded
        let groups = vec![(0, 0), (0, 0), (1, 2), (1, 2)];
        let ds = dataset(&groups);
        let correct = [true, true, false, false];
        let pool = ModelPool::new(vec![model("a", &correct), model("b", &correct)], &ds).unwrap();
        let all = ds.all_indices();
        let u = identify_unprivileged(&ds, &pool, &all, 0.0, true).unwrap();
        assert!(!u.is_flagged(1, 2));
        let u = identify_unprivileged(&ds, &pool, &all, 0.0, false).unwrap();
        assert!(u.is_flagged(1, 2));
    }

    #[test]
    fn algorithm_weights_hand_trace() {
        // old members: s0 (old, hand), s1 (old, head), s2 (old, head); s3 (young, hand)
        let ds = dataset(&[(1, 1), (1, 0), (1, 0), (0, 1), (0, 0)]);
        let unpriv = flag(&[&[1], &[1]]);
        let train = ds.all_indices();
        let w = compute_weights(&ds, &train, &unpriv).unwrap();
        assert_eq!(w.sample_weight, vec![2, 1, 1, 1, 0]);
        assert_eq!(w.group(0, 1), Some(4.0 / 3.0));
        assert_eq!(w.group(1, 1), Some(1.5));
    }

    #[test]
    fn vacuous_weights() {
        let ds = dataset(&[(1, 1), (0, 0)]);
        let w = compute_weights(&ds, &ds.all_indices(), &flag(&[&[], &[]])).unwrap();
        assert!(w.sample_weight.iter().all(|&x| x == 0));
        assert!(w.group_weight.is_empty());
    }

    #[test]
    fn empty_flagged_group_errors() {
        let ds = dataset(&[(0, 0), (1, 1)]);
        assert!(compute_weights(&ds, &[0], &flag(&[&[1], &[]])).is_err());
    }

    #[test]
    fn proxy_uses_max_group_weight_and_skips_privileged() {
        // old = {s0, s1, s2} weights {2, 1, 1} -> 4/3; hand = {s0, s3} weights {2, 1} -> 1.5
        let ds = dataset(&[(1, 1), (1, 0), (1, 0), (0, 1), (0, 0)]);
        let correct = [true; 5];
        let pool = ModelPool::new(vec![model("a", &correct), model("b", &correct)], &ds).unwrap();
        let unpriv = flag(&[&[1], &[1]]);
        let train = ds.all_indices();
        let w = compute_weights(&ds, &train, &unpriv).unwrap();
        let proxy = build_proxy(&ds, &pool, &[1, 0], &train, &unpriv, &w).unwrap();
        let ids: Vec<&str> = proxy.iter().map(|p| p.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["s0", "s1", "s2", "s3"]);
        assert_eq!(proxy[0].weight, 1.5);
        assert_eq!(proxy[1].weight, 4.0 / 3.0);
        assert_eq!(proxy[3].weight, 1.5);
        assert_eq!(proxy[0].input.len(), 6);
        assert_eq!(proxy[0].target, vec![1.0, 0.0, 0.0]);
        for p in &proxy {
            for block in p.input.chunks(3) {
                assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        assert!(build_proxy(&ds, &pool, &[2], &train, &unpriv, &w).is_err());
    }
}
