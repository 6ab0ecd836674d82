//! Engineered datasets and model pools with controllable per-group accuracy
//! and pairwise complementarity.
//!
//! Samples are laid out over the cells of the attribute cross product with
//! exact (largest-remainder) cell counts. A model's correctness probability
//! in a cell is additive in its per-attribute group targets:
//!
//! `p(cell) = overall + sum_k (target[k][g_k] - overall)`
//!
//! which reproduces every group target exactly when attributes are
//! independent and each attribute's targets average to the same `overall`.
//! Correct counts are realized exactly per cell (rounded), not drawn, so
//! realized group accuracies sit within rounding of their targets.
//!
//! Paired models are coupled. On cells touching a designated unprivileged
//! group the fraction of samples where exactly one of the pair is correct
//! equals `complementarity`; elsewhere the pair is maximally agreeing.
//! Correct predictions carry higher confidence than wrong ones, which is the
//! signal a fusion head can exploit when the pair disagrees.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Attribute, AttributeSchema, Dataset, LabeledSample};
use super::pool::{ModelEntry, ModelPool, ScoreKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub name: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAttribute {
    pub name: String,
    pub groups: Vec<SynthGroup>,
    #[serde(default)]
    pub unknown_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub name: String,
    /// attribute -> group -> target accuracy
    pub accuracy: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRef {
    pub attribute: String,
    pub group: String,
}

/// Confidence ranges for the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub correct: (f64, f64),
    pub wrong: (f64, f64),
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            correct: (0.70, 0.98),
            wrong: (0.51, 0.72),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub num_samples: usize,
    pub attributes: Vec<SynthAttribute>,
    pub models: Vec<SynthModel>,
    /// Groups on which paired models are complementary.
    #[serde(default)]
    pub unprivileged: Vec<GroupRef>,
    /// Probability that exactly one model of a pair is correct on a sample of
    /// a designated unprivileged group.
    #[serde(default)]
    pub complementarity: f64,
    /// Coupled model pairs (indices into `models`); each model in at most one.
    #[serde(default = "default_pairs")]
    pub pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub confidence: ConfidenceConfig,
}

fn default_pairs() -> Vec<(usize, usize)> {
    vec![(0, 1)]
}

const SHARE_TOLERANCE: f64 = 1e-9;
const OVERALL_TOLERANCE: f64 = 1e-6;

/// Per-cell plan derived from a validated config.
struct Plan {
    schema: AttributeSchema,
    /// group index per attribute, one entry per cell
    cells: Vec<Vec<usize>>,
    cell_counts: Vec<usize>,
    /// p[model][cell]
    accuracy: Vec<Vec<f64>>,
    /// whether a cell touches a designated unprivileged group
    unprivileged_cell: Vec<bool>,
}

impl SyntheticConfig {
    fn plan(&self) -> Result<Plan> {
        let invalid = |m: String| Err(Error::Invalid(m));
        if self.num_classes < 2 {
            return invalid("synthetic data needs at least 2 classes".into());
        }
        if self.num_samples < 5 {
            return invalid("synthetic data needs at least 5 samples".into());
        }
        if self.models.len() < 2 {
            return invalid("synthetic pool needs at least 2 models".into());
        }
        let schema = AttributeSchema::new(
            self.attributes
                .iter()
                .map(|a| Attribute {
                    name: a.name.clone(),
                    groups: a.groups.iter().map(|g| g.name.clone()).collect(),
                    unknown_group: a.unknown_group.clone(),
                })
                .collect(),
        )?;
        for a in &self.attributes {
            let total: f64 = a.groups.iter().map(|g| g.share).sum();
            if a.groups.iter().any(|g| g.share <= 0.0) || (total - 1.0).abs() > SHARE_TOLERANCE {
                return invalid(format!(
                    "group shares of attribute '{}' must be positive and sum to 1",
                    a.name
                ));
            }
        }
        let (lo, hi) = self.confidence.correct;
        let (wlo, whi) = self.confidence.wrong;
        if !(lo > 0.5 && lo <= hi && hi <= 1.0 && wlo > 0.5 && wlo <= whi && whi <= 1.0) {
            return invalid("confidence ranges must lie in (0.5, 1] with lo <= hi".into());
        }

        // targets[model][attr][group]
        let mut targets = Vec::with_capacity(self.models.len());
        let mut overall = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let mut per_attr = Vec::new();
            let mut implied: Vec<f64> = Vec::new();
            for a in &self.attributes {
                let table = m.accuracy.get(&a.name).ok_or_else(|| {
                    Error::Invalid(format!("model '{}' has no targets for '{}'", m.name, a.name))
                })?;
                let mut row = Vec::new();
                for g in &a.groups {
                    let t = *table.get(&g.name).ok_or_else(|| {
                        Error::Invalid(format!(
                            "model '{}' has no target for group '{}' of '{}'",
                            m.name, g.name, a.name
                        ))
                    })?;
                    if !(0.0..=1.0).contains(&t) {
                        return invalid(format!("target {t} of model '{}' outside [0,1]", m.name));
                    }
                    row.push(t);
                }
                implied.push(a.groups.iter().zip(&row).map(|(g, t)| g.share * t).sum());
                per_attr.push(row);
            }
            let base = implied[0];
            if let Some((k, v)) = implied
                .iter()
                .enumerate()
                .find(|(_, v)| (**v - base).abs() > OVERALL_TOLERANCE)
            {
                return Err(Error::Infeasible(format!(
                    "model '{}' implies overall accuracy {base} under '{}' but {v} under '{}'",
                    m.name, self.attributes[0].name, self.attributes[k].name
                )));
            }
            targets.push(per_attr);
            overall.push(base);
        }

        let mut designated = vec![Vec::new(); self.attributes.len()];
        for r in &self.unprivileged {
            let k = schema.attribute_index(&r.attribute).ok_or_else(|| {
                Error::Invalid(format!("unknown attribute '{}'", r.attribute))
            })?;
            let g = schema.attributes[k].group_index(&r.group).ok_or_else(|| {
                Error::Invalid(format!("unknown group '{}' for attribute '{}'", r.group, r.attribute))
            })?;
            designated[k].push(g);
        }

        let mut used = vec![false; self.models.len()];
        for &(a, b) in &self.pairs {
            if a >= self.models.len() || b >= self.models.len() || a == b || used[a] || used[b] {
                return invalid(format!("invalid model pair ({a}, {b})"));
            }
            used[a] = true;
            used[b] = true;
        }
        if !(0.0..=1.0).contains(&self.complementarity) {
            return Err(Error::Infeasible(format!(
                "complementarity {} outside [0,1]",
                self.complementarity
            )));
        }

        // cells of the cross product, first attribute slowest
        let mut cells: Vec<Vec<usize>> = vec![Vec::new()];
        for a in &self.attributes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    (0..a.groups.len()).map(move |g| {
                        let mut next = c.clone();
                        next.push(g);
                        next
                    })
                })
                .collect();
        }
        let shares: Vec<f64> = cells
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&self.attributes)
                    .map(|(&g, a)| a.groups[g].share)
                    .product()
            })
            .collect();
        let cell_counts = largest_remainder(self.num_samples, &shares);

        let accuracy: Vec<Vec<f64>> = (0..self.models.len())
            .map(|m| {
                cells
                    .iter()
                    .map(|c| {
                        overall[m]
                            + c.iter()
                                .enumerate()
                                .map(|(k, &g)| targets[m][k][g] - overall[m])
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let unprivileged_cell: Vec<bool> = cells
            .iter()
            .map(|c| c.iter().enumerate().any(|(k, g)| designated[k].contains(g)))
            .collect();

        for (m, row) in accuracy.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                    return Err(Error::Infeasible(format!(
                        "model '{}' needs accuracy {p} on cell {}, outside [0,1]",
                        self.models[m].name,
                        describe_cell(&schema, &cells[c])
                    )));
                }
            }
        }
        let r = self.complementarity;
        for &(a, b) in &self.pairs {
            for c in (0..cells.len()).filter(|&c| unprivileged_cell[c]) {
                let (pa, pb) = (accuracy[a][c].clamp(0.0, 1.0), accuracy[b][c].clamp(0.0, 1.0));
                let upper = (pa + pb).min(2.0 - pa - pb);
                if r > upper + 1e-12 {
                    return Err(Error::Infeasible(format!(
                        "complementarity rate {r} > min(a+b, 2-a-b) = {upper} for models '{}' (a={pa}) and '{}' (b={pb}) on {}",
                        self.models[a].name,
                        self.models[b].name,
                        describe_cell(&schema, &cells[c])
                    )));
                }
                if r + 1e-12 < (pa - pb).abs() {
                    return Err(Error::Infeasible(format!(
                        "complementarity rate {r} < |a-b| = {} for models '{}' and '{}' on {}",
                        (pa - pb).abs(),
                        self.models[a].name,
                        self.models[b].name,
                        describe_cell(&schema, &cells[c])
                    )));
                }
            }
        }

        Ok(Plan {
            schema,
            cells,
            cell_counts,
            accuracy,
            unprivileged_cell,
        })
    }

    /// Checks the configuration without generating anything.
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }
}

fn describe_cell(schema: &AttributeSchema, cell: &[usize]) -> String {
    cell.iter()
        .zip(&schema.attributes)
        .map(|(&g, a)| format!("{}={}", a.name, a.groups[g]))
        .collect::<Vec<_>>()
        .join(",")
}

/// Integer counts summing to `total`, proportional to `shares`.
fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn round_count(p: f64, n: usize) -> usize {
    ((p * n as f64).round().max(0.0) as usize).min(n)
}

/// Generates a dataset and a probability-score pool from `config`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<(Dataset, ModelPool)> {
    let plan = config.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = config.num_classes;
    let n_models = config.models.len();

    // per sample: cell, label; per model: correct flag
    let mut cell_of = Vec::with_capacity(config.num_samples);
    let mut correct = vec![Vec::with_capacity(config.num_samples); n_models];
    for (c, &count) in plan.cell_counts.iter().enumerate() {
        let mut flags = vec![vec![false; count]; n_models];
        let mut paired = vec![false; n_models];
        for &(a, b) in &config.pairs {
            paired[a] = true;
            paired[b] = true;
            let na = round_count(plan.accuracy[a][c], count);
            let nb = round_count(plan.accuracy[b][c], count);
            let both = if plan.unprivileged_cell[c] {
                let ideal = (plan.accuracy[a][c] + plan.accuracy[b][c] - config.complementarity)
                    / 2.0
                    * count as f64;
                (ideal.round().max(0.0) as usize)
                    .clamp((na + nb).saturating_sub(count), na.min(nb))
            } else {
                na.min(nb)
            };
            let only_a = na - both;
            let only_b = nb - both;
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                if pos < both {
                    flags[a][i] = true;
                    flags[b][i] = true;
                } else if pos < both + only_a {
                    flags[a][i] = true;
                } else if pos < both + only_a + only_b {
                    flags[b][i] = true;
                }
            }
        }
        for (j, f) in flags.iter_mut().enumerate().filter(|(j, _)| !paired[*j]) {
            let nj = round_count(plan.accuracy[j][c], count);
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng);
            for &i in &order[..nj] {
                f[i] = true;
            }
        }
        for _ in 0..count {
            cell_of.push(c);
        }
        for (j, f) in flags.into_iter().enumerate() {
            correct[j].extend(f);
        }
    }

    // shuffle sample order so cells interleave
    let n = cell_of.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let width = n.to_string().len();
    let mut samples = Vec::with_capacity(n);
    for (pos, &src) in perm.iter().enumerate() {
        samples.push(LabeledSample {
            sample_id: format!("s{:0width$}", pos, width = width),
            label: rng.gen_range(0..m),
            groups: plan.cells[cell_of[src]].clone(),
        });
    }
    let dataset = Dataset::new(plan.schema, m, samples)?;

    let conf = config.confidence;
    let mut entries = Vec::with_capacity(n_models);
    for (j, model) in config.models.iter().enumerate() {
        let rows = perm
            .iter()
            .enumerate()
            .map(|(pos, &src)| {
                score_row(&mut rng, m, dataset.samples[pos].label, correct[j][src], conf)
            })
            .collect();
        entries.push(ModelEntry::from_rows(
            model.name.clone(),
            ScoreKind::Probability,
            m,
            rows,
            None,
        )?);
    }
    let pool = ModelPool::new(entries, &dataset)?;
    Ok((dataset, pool))
}

fn score_row(rng: &mut ChaCha8Rng, m: usize, label: usize, correct: bool, conf: ConfidenceConfig) -> Vec<f64> {
    let (lo, hi) = if correct { conf.correct } else { conf.wrong };
    let top_conf = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let top = if correct {
        label
    } else {
        let k = rng.gen_range(0..m - 1);
        if k >= label {
            k + 1
        } else {
            k
        }
    };
    let mut row = vec![0.0; m];
    row[top] = top_conf;
    let rest = 1.0 - top_conf;
    let others: Vec<usize> = (0..m).filter(|&c| c != top).collect();
    if correct || others.len() == 1 {
        let w: Vec<f64> = others.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        for (&c, wi) in others.iter().zip(&w) {
            row[c] = rest * wi / total;
        }
    } else {
        // a wrong model still leans toward the true label among the rest
        let true_share = rng.gen_range(0.5..0.9);
        row[label] = rest * true_share;
        let remaining: Vec<usize> = others.iter().copied().filter(|&c| c != label).collect();
        let w: Vec<f64> = remaining.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        for (&c, wi) in remaining.iter().zip(&w) {
            row[c] = rest * (1.0 - true_share) * wi / total;
        }
    }
    // exact normalization against rounding drift
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

fn group(name: &str, share: f64) -> SynthGroup {
    SynthGroup {
        name: name.into(),
        share,
    }
}

fn targets(pairs: &[(&str, &[(&str, f64)])]) -> BTreeMap<String, BTreeMap<String, f64>> {
    pairs
        .iter()
        .map(|(attr, groups)| {
            (
                attr.to_string(),
                groups.iter().map(|(g, t)| (g.to_string(), *t)).collect(),
            )
        })
        .collect()
}

/// Names of the shipped presets.
pub const PRESETS: &[&str] = &["complementary-2attr", "uniform-fair"];

/// Two attributes, two similar models that are complementary on the
/// unprivileged groups `age=old` and `site=hand`.
pub fn preset_complementary_2attr() -> SyntheticConfig {
    SyntheticConfig {
        num_classes: 4,
        num_samples: 6000,
        attributes: vec![
            SynthAttribute {
                name: "age".into(),
                groups: vec![group("young", 0.6), group("old", 0.4)],
                unknown_group: None,
            },
            SynthAttribute {
                name: "site".into(),
                groups: vec![group("head", 0.55), group("hand", 0.35), group("unknown", 0.10)],
                unknown_group: Some("unknown".into()),
            },
        ],
        models: vec![
            SynthModel {
                name: "resnet18-sim".into(),
                accuracy: targets(&[
                    ("age", &[("young", 0.85), ("old", 0.60)]),
                    ("site", &[("head", 0.85), ("hand", 0.60), ("unknown", 0.725)]),
                ]),
            },
            SynthModel {
                name: "densenet121-sim".into(),
                accuracy: targets(&[
                    ("age", &[("young", 0.83), ("old", 0.62)]),
                    ("site", &[("head", 0.84), ("hand", 0.61), ("unknown", 0.705)]),
                ]),
            },
        ],
        unprivileged: vec![
            GroupRef {
                attribute: "age".into(),
                group: "old".into(),
            },
            GroupRef {
                attribute: "site".into(),
                group: "hand".into(),
            },
        ],
        complementarity: 0.30,
        pairs: vec![(0, 1)],
        confidence: ConfidenceConfig::default(),
    }
}

/// Two perfect models on two balanced attributes: no group is unprivileged.
pub fn preset_uniform_fair() -> SyntheticConfig {
    let perfect = || {
        targets(&[
            ("age", &[("young", 1.0), ("old", 1.0)]),
            ("site", &[("head", 1.0), ("hand", 1.0)]),
        ])
    };
    SyntheticConfig {
        num_classes: 3,
        num_samples: 2000,
        attributes: vec![
            SynthAttribute {
                name: "age".into(),
                groups: vec![group("young", 0.5), group("old", 0.5)],
                unknown_group: None,
            },
            SynthAttribute {
                name: "site".into(),
                groups: vec![group("head", 0.5), group("hand", 0.5)],
                unknown_group: None,
            },
        ],
        models: vec![
            SynthModel {
                name: "model-a".into(),
                accuracy: perfect(),
            },
            SynthModel {
                name: "model-b".into(),
                accuracy: perfect(),
            },
        ],
        unprivileged: Vec::new(),
        complementarity: 0.0,
        pairs: vec![(0, 1)],
        confidence: ConfidenceConfig::default(),
    }
}

pub fn preset(name: &str) -> Result<SyntheticConfig> {
    match name {
        "complementary-2attr" => Ok(preset_complementary_2attr()),
        "uniform-fair" => Ok(preset_uniform_fair()),
        _ => Err(Error::Invalid(format!(
            "unknown preset '{name}' (available: {})",
            PRESETS.join(", ")
        ))),
    }
}
