//! Independent recounts and numeric checks shared by the test suites and the
//! acceptance harness. Each returns `Err` with a description on mismatch.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use muffin::controller::{
    log_prob_gradient, replay_plan, ControllerParams, DecisionPlan, PolicyConfig, PolicyWeights, Step,
};
use muffin::data::{Dataset, ModelEntry, ModelPool, ScoreKind};
use muffin::metrics::{self, full_report, Predictions};
use muffin::mlp::{fused_predict, gradient, init_mlp, loss, Activation, MlpParams, MlpSpec};
use muffin::proxy::{build_proxy, compute_weights, ProxySample, UnprivilegedMap};

use super::{random_dataset, random_pool, row_favoring};

pub const METRIC_TOLERANCE: f64 = 1e-12;

/// Sample-by-sample recount of accuracy and per-attribute unfairness over
/// `split`, keyed by group name.
fn recount(dataset: &Dataset, preds: &[usize], split: &[usize]) -> (f64, Vec<f64>) {
    let mut hits = 0usize;
    let mut per_group: Vec<BTreeMap<String, (usize, usize)>> =
        vec![BTreeMap::new(); dataset.schema.attributes.len()];
    for (pos, &i) in split.iter().enumerate() {
        let s = &dataset.samples[i];
        let ok = preds[pos] == s.label;
        hits += ok as usize;
        for (k, attr) in dataset.schema.attributes.iter().enumerate() {
            let e = per_group[k].entry(attr.groups[s.groups[k]].clone()).or_default();
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    let a = hits as f64 / split.len() as f64;
    let u = per_group
        .iter()
        .map(|groups| {
            groups
                .values()
                .map(|&(h, n)| (h as f64 / n as f64 - a).abs())
                .sum()
        })
        .collect();
    (a, u)
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, oracle {want}"))
    }
}

/// One randomized metric instance: N <= 200, M <= 5, G <= 6.
pub fn metric_instance(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, 200, 5, 6);
    let n = ds.len();
    let mut split: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
    if split.is_empty() {
        split.push(rng.gen_range(0..n));
    }
    split.shuffle(&mut rng);
    let preds: Vec<usize> = split
        .iter()
        .map(|&i| {
            if rng.gen_bool(0.6) {
                ds.samples[i].label
            } else {
                rng.gen_range(0..ds.num_classes)
            }
        })
        .collect();
    let eps = 10f64.powi(-rng.gen_range(1..5));
    let (a, u) = recount(&ds, &preds, &split);
    let p = Predictions(preds.clone());
    let report = full_report(&p, &ds, &split, eps).map_err(|e| e.to_string())?;
    close("accuracy", report.overall_accuracy, a, METRIC_TOLERANCE)?;
    for (k, attr) in ds.schema.attributes.iter().enumerate() {
        let direct = metrics::unfairness(&p, &ds, &split, &attr.name).map_err(|e| e.to_string())?;
        close("unfairness", direct, u[k], METRIC_TOLERANCE)?;
        close("report unfairness", report.per_attribute_unfairness[k], u[k], METRIC_TOLERANCE)?;
    }
    let multi: f64 = u.iter().sum();
    close("multi_unfairness", report.multi_unfairness, multi, METRIC_TOLERANCE)?;
    let reward: f64 = u.iter().map(|&x| a / if x < eps { eps } else { x }).sum();
    close("reward", report.reward, reward, METRIC_TOLERANCE * reward.max(1.0))?;

    // breakdown of two prediction vectors over the whole dataset
    let labels = ds.labels();
    let pa: Vec<usize> = labels.iter().map(|&l| if rng.gen_bool(0.5) { l } else { (l + 1) % ds.num_classes }).collect();
    let pb: Vec<usize> = labels.iter().map(|&l| if rng.gen_bool(0.5) { l } else { (l + 1) % ds.num_classes }).collect();
    let subset: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
    if !subset.is_empty() {
        let bd = metrics::disagreement_breakdown(&pa, &pb, &labels, &subset).map_err(|e| e.to_string())?;
        let mut c = [0usize; 4];
        for &i in &subset {
            match (pa[i] == labels[i], pb[i] == labels[i]) {
                (false, false) => c[0] += 1,
                (true, false) => c[1] += 1,
                (false, true) => c[2] += 1,
                (true, true) => c[3] += 1,
            }
        }
        let t = subset.len() as f64;
        close("both_wrong", bd.both_wrong, c[0] as f64 / t, METRIC_TOLERANCE)?;
        close("only_a", bd.only_a, c[1] as f64 / t, METRIC_TOLERANCE)?;
        close("only_b", bd.only_b, c[2] as f64 / t, METRIC_TOLERANCE)?;
        close("both_right", bd.both_right, c[3] as f64 / t, METRIC_TOLERANCE)?;
        let sum = bd.both_wrong + bd.only_a + bd.only_b + bd.both_right;
        close("breakdown closure", sum, 1.0, METRIC_TOLERANCE)?;
    }
    Ok(())
}

/// Random flagged groups with at least one training member each.
pub fn random_unprivileged(rng: &mut ChaCha8Rng, ds: &Dataset, train: &[usize]) -> UnprivilegedMap {
    let groups = ds
        .schema
        .attributes
        .iter()
        .enumerate()
        .map(|(k, attr)| {
            (0..attr.groups.len())
                .filter(|&g| rng.gen_bool(0.4) && !ds.members(k, g, train).is_empty())
                .collect::<BTreeSet<usize>>()
        })
        .collect();
    UnprivilegedMap {
        groups,
        basis_accuracy: 0.5,
        margin: 0.0,
    }
}

/// One randomized weighting instance, recounted by hand.
pub fn weight_instance(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, 200, 4, 6);
    let train: Vec<usize> = (0..ds.len()).filter(|_| rng.gen_bool(0.64)).collect();
    let unpriv = random_unprivileged(&mut rng, &ds, &train);
    let table = compute_weights(&ds, &train, &unpriv).map_err(|e| e.to_string())?;

    let in_train: BTreeSet<usize> = train.iter().copied().collect();
    let mut want_sample = vec![0u32; ds.len()];
    for &i in &train {
        for (k, flagged) in unpriv.groups.iter().enumerate() {
            if flagged.contains(&ds.samples[i].groups[k]) {
                want_sample[i] += 1;
            }
        }
    }
    for i in 0..ds.len() {
        let want = if in_train.contains(&i) { want_sample[i] } else { 0 };
        if table.sample_weight[i] != want {
            return Err(format!("sample {i}: weight {} != {want}", table.sample_weight[i]));
        }
        if table.sample_weight[i] as usize > ds.schema.len() {
            return Err(format!("sample {i}: weight exceeds attribute count"));
        }
    }
    let mut want_group: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (k, flagged) in unpriv.groups.iter().enumerate() {
        for &g in flagged {
            let members: Vec<usize> = train.iter().copied().filter(|&i| ds.samples[i].groups[k] == g).collect();
            let total: f64 = members.iter().map(|&i| want_sample[i] as f64).sum();
            want_group.insert((k, g), total / members.len() as f64);
        }
    }
    if table.group_weight.len() != want_group.len() {
        return Err("group weight count differs".into());
    }
    for gw in &table.group_weight {
        let want = want_group[&(gw.attribute, gw.group)];
        close("group weight", gw.weight, want, METRIC_TOLERANCE)?;
        if !(gw.weight > 0.0 && gw.weight <= ds.schema.len() as f64) {
            return Err(format!("group weight {} out of bounds", gw.weight));
        }
    }

    // proxy: coverage, exclusion and the max rule
    let pool = random_pool(&mut rng, &ds, 2);
    let proxy = build_proxy(&ds, &pool, &[1, 0], &train, &unpriv, &table).map_err(|e| e.to_string())?;
    let expected: Vec<usize> = train.iter().copied().filter(|&i| want_sample[i] > 0).collect();
    let got: Vec<usize> = proxy.iter().map(|p| p.sample).collect();
    if got != expected {
        return Err("proxy membership differs from flagged training samples".into());
    }
    for p in &proxy {
        let want = unpriv
            .groups
            .iter()
            .enumerate()
            .filter(|(k, f)| f.contains(&ds.samples[p.sample].groups[*k]))
            .map(|(k, _)| want_group[&(k, ds.samples[p.sample].groups[k])])
            .fold(f64::MIN, f64::max);
        close("proxy weight", p.weight, want, METRIC_TOLERANCE)?;
        let m = ds.num_classes;
        if p.input[..m] != *pool.entries[1].row(p.sample) || p.input[m..] != *pool.entries[0].row(p.sample) {
            return Err("proxy input not in selection order".into());
        }
    }
    Ok(())
}

/// Relative error with a floor so that near-zero components compare
/// absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

pub const FD_STEP: f64 = 1e-5;

/// Random MLP spec and batch; `act` forces the first activation.
pub fn random_mlp_problem(seed: u64, act: Activation) -> (MlpSpec, MlpParams, Vec<ProxySample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..=4);
    let n_sel = rng.gen_range(1..=3);
    let depth = rng.gen_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=6)).collect();
    let mut acts: Vec<Activation> = (0..depth).map(|_| *Activation::ALL.choose(&mut rng).unwrap()).collect();
    acts[0] = act;
    let spec = MlpSpec::new(hidden, acts, n_sel * m, m).unwrap();
    let mut params = init_mlp(&spec, seed);
    for l in &mut params.layers {
        for b in &mut l.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let batch = (0..rng.gen_range(1..=5))
        .map(|i| {
            let mut input = Vec::new();
            for _ in 0..n_sel {
                let c = rng.gen_range(0..m);
                input.extend(row_favoring(&mut rng, m, c));
            }
            let mut target = vec![0.0; m];
            target[rng.gen_range(0..m)] = 1.0;
            ProxySample {
                sample: i,
                sample_id: format!("s{i}"),
                input,
                target,
                weight: rng.gen_range(0.0..2.0),
            }
        })
        .collect();
    (spec, params, batch)
}

/// Largest relative error between the analytic gradient and central
/// differences over every parameter.
pub fn mlp_gradient_error(spec: &MlpSpec, params: &MlpParams, batch: &[ProxySample]) -> f64 {
    let analytic: Vec<f64> = gradient(params, spec, batch).unwrap().values().collect();
    let mut worst: f64 = 0.0;
    for (j, &a) in analytic.iter().enumerate() {
        let mut plus = params.clone();
        *plus.values_mut().nth(j).unwrap() += FD_STEP;
        let mut minus = params.clone();
        *minus.values_mut().nth(j).unwrap() -= FD_STEP;
        let numeric = (loss(&plus, spec, batch).unwrap() - loss(&minus, spec, batch).unwrap()) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

/// Consensus routing on a random pool; returns the number of consensus
/// samples checked.
pub fn consensus_instance(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, 200, 5, 4);
    let k = rng.gen_range(2..=4);
    let pool = random_pool(&mut rng, &ds, k);
    let mut selected: Vec<usize> = (0..k).collect();
    selected.shuffle(&mut rng);
    selected.truncate(rng.gen_range(1..=k));
    let m = ds.num_classes;
    let spec = MlpSpec::new(vec![5], vec![Activation::Tanh], selected.len() * m, m).unwrap();
    let mut params = init_mlp(&spec, seed);
    // an adversarial head: always prefers the class after the first model's
    for v in params.values_mut() {
        *v *= 10.0;
    }
    let mut checked = 0;
    for i in 0..ds.len() {
        let first = pool.entries[selected[0]].predict(i);
        if selected.iter().all(|&j| pool.entries[j].predict(i) == first) {
            let got = fused_predict(&pool, &selected, &params, &spec, i).map_err(|e| e.to_string())?;
            if got != first {
                return Err(format!("sample {i}: consensus {first} but fused {got}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// A single decision among `arms` actions.
pub struct Bandit {
    pub arms: usize,
}

impl DecisionPlan for Bandit {
    fn next_step(&self, actions: &[usize]) -> Option<Step> {
        actions.is_empty().then_some(Step {
            decoder: 0,
            token_offset: 1,
            allowed: None,
        })
    }
}

pub fn bandit_params(arms: usize, hidden: usize, lr: f64, seed: u64) -> ControllerParams {
    let config = PolicyConfig {
        hidden_size: hidden,
        learning_rate: lr,
        ..PolicyConfig::default()
    };
    ControllerParams::new(&[arms], arms + 1, config, seed).unwrap()
}

pub fn arm_probabilities(params: &ControllerParams, arms: usize) -> Vec<f64> {
    let plan = Bandit { arms };
    (0..arms)
        .map(|a| replay_plan(params, &plan, &[a]).unwrap().log_prob().exp())
        .collect()
}

/// Analytic gradient of E[R] = sum_a pi_a r_a against central differences
/// of the exactly enumerated expectation; returns the worst relative error.
pub fn bandit_gradient_error(params: &ControllerParams, rewards: &[f64]) -> f64 {
    let plan = Bandit { arms: rewards.len() };
    let probs = arm_probabilities(params, rewards.len());
    let mut analytic: PolicyWeights = params.weights.zeros_like();
    for (a, (&p, &r)) in probs.iter().zip(rewards).enumerate() {
        let trace = replay_plan(params, &plan, &[a]).unwrap();
        let g = log_prob_gradient(&params.weights, &trace.steps, &[p * r]).unwrap();
        analytic.add_scaled(&g, 1.0);
    }
    let expected = |p: &ControllerParams| -> f64 {
        arm_probabilities(p, rewards.len())
            .iter()
            .zip(rewards)
            .map(|(p, r)| p * r)
            .sum()
    };
    let mut worst: f64 = 0.0;
    for (j, a) in analytic.values().enumerate() {
        let mut plus = params.clone();
        *plus.weights.values_mut().nth(j).unwrap() += FD_STEP;
        let mut minus = params.clone();
        *minus.weights.values_mut().nth(j).unwrap() -= FD_STEP;
        let numeric = (expected(&plus) - expected(&minus)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

/// Deterministic bandit: returns the update count at which arm 0's
/// probability first exceeds `target`, if within `max_updates`.
pub fn bandit_convergence(seed: u64, rewards: &[f64], target: f64, max_updates: usize) -> Option<usize> {
    let mut params = bandit_params(rewards.len(), 64, 0.01, seed);
    let plan = Bandit { arms: rewards.len() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba4d17);
    for update in 1..=max_updates {
        let batch: Vec<_> = (0..params.config.batch_size)
            .map(|_| {
                let mut t = muffin::controller::sample_plan(&params, &plan, &mut rng).unwrap();
                t.reward = Some(rewards[t.steps[0].action]);
                t
            })
            .collect();
        muffin::controller::reinforce_update(&mut params, &batch).unwrap();
        if arm_probabilities(&params, rewards.len())[0] > target {
            return Some(update);
        }
    }
    None
}

/// A model entry whose argmax on every sample is given.
pub fn entry_with_predictions(rng: &mut ChaCha8Rng, name: &str, m: usize, preds: &[usize]) -> ModelEntry {
    let rows = preds.iter().map(|&c| row_favoring(rng, m, c)).collect();
    ModelEntry::from_rows(name, ScoreKind::Probability, m, rows, None).unwrap()
}

pub fn pool_from_predictions(rng: &mut ChaCha8Rng, ds: &Dataset, preds: &[Vec<usize>]) -> ModelPool {
    let entries = preds
        .iter()
        .enumerate()
        .map(|(j, p)| entry_with_predictions(rng, &format!("m{j}"), ds.num_classes, p))
        .collect();
    ModelPool::new(entries, ds).unwrap()
}

pub fn index_map(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
