#![allow(dead_code)]

pub mod oracles;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use muffin::data::synth::{self, SynthModel};
use muffin::data::{
    Attribute, AttributeSchema, Dataset, LabeledSample, ModelEntry, ModelPool, ScoreKind,
    SyntheticConfig,
};

/// Schema with `sizes[k]` groups named `g0..` for attribute `a{k}`.
pub fn schema(sizes: &[usize]) -> AttributeSchema {
    AttributeSchema::new(
        sizes
            .iter()
            .enumerate()
            .map(|(k, &g)| Attribute {
                name: format!("a{k}"),
                groups: (0..g).map(|i| format!("g{i}")).collect(),
                unknown_group: None,
            })
            .collect(),
    )
    .unwrap()
}

/// Dataset from parallel label and group-index lists.
pub fn dataset(sizes: &[usize], m: usize, labels: &[usize], groups: &[Vec<usize>]) -> Dataset {
    let samples = labels
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (&label, g))| LabeledSample {
            sample_id: format!("s{i}"),
            label,
            groups: g.clone(),
        })
        .collect();
    Dataset::new(schema(sizes), m, samples).unwrap()
}

/// Random dataset with `1..=3` attributes of `2..=g_max` groups each.
pub fn random_dataset(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize, g_max: usize) -> Dataset {
    let n = rng.gen_range(1..=n_max);
    let m = rng.gen_range(2..=m_max);
    let k = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(2..=g_max)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
    let groups: Vec<Vec<usize>> = (0..n)
        .map(|_| sizes.iter().map(|&g| rng.gen_range(0..g)).collect())
        .collect();
    dataset(&sizes, m, &labels, &groups)
}

/// Predictions that are right with probability `p`, otherwise uniform.
pub fn noisy_predictions(rng: &mut ChaCha8Rng, dataset: &Dataset, p: f64) -> Vec<usize> {
    dataset
        .samples
        .iter()
        .map(|s| {
            if rng.gen_bool(p) {
                s.label
            } else {
                rng.gen_range(0..dataset.num_classes)
            }
        })
        .collect()
}

/// Random probability row whose argmax is `class`.
pub fn row_favoring(rng: &mut ChaCha8Rng, m: usize, class: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    row[class] += 1.0;
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

/// Pool of `k` models, each with accuracy drawn from [0.4, 0.95].
pub fn random_pool(rng: &mut ChaCha8Rng, dataset: &Dataset, k: usize) -> ModelPool {
    let m = dataset.num_classes;
    let entries = (0..k)
        .map(|j| {
            let p = rng.gen_range(0.4..0.95);
            let preds = noisy_predictions(rng, dataset, p);
            let rows = preds.iter().map(|&c| row_favoring(rng, m, c)).collect();
            ModelEntry::from_rows(format!("m{j}"), ScoreKind::Probability, m, rows, None).unwrap()
        })
        .collect();
    ModelPool::new(entries, dataset).unwrap()
}

/// The two-attribute preset extended to four models in two complementary
/// pairs, at `n` samples.
pub fn four_model_config(n: usize) -> SyntheticConfig {
    let mut c = synth::preset_complementary_2attr();
    c.num_samples = n;
    let extra: Vec<SynthModel> = c
        .models
        .iter()
        .map(|m| SynthModel {
            name: format!("{}-b", m.name),
            accuracy: m.accuracy.clone(),
        })
        .collect();
    c.models.extend(extra);
    c.pairs = vec![(0, 1), (2, 3)];
    c
}
