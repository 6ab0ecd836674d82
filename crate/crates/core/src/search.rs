//! Episode loop: sample a structure, build its proxy, train the head, score
//! it on the validation split and feed the reward back to the controller.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    reinforce_update, sample_episode, ControllerParams, FusionSpec, PolicyConfig, SearchSpace,
};
use crate::data::{split_dataset, Dataset, ModelPool, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{full_report, FairnessReport};
use crate::mlp::{fused_predictions, init_mlp, train, FusionHead, TrainConfig};
use crate::proxy::{
    build_proxy, build_uniform_proxy, compute_weights, identify_unprivileged,
    identify_unprivileged_with, UnprivilegedMap, WeightTable,
};

/// Largest space [`brute_force_oracle`] will enumerate.
pub const ORACLE_LIMIT: u128 = 10_000;

/// Which models decide the unprivileged groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnprivBasis {
    /// Every pool model, once before the search.
    #[default]
    PoolMean,
    /// The episode's selected models.
    PerEpisode,
}

impl FromStr for UnprivBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool_mean" => Ok(UnprivBasis::PoolMean),
            "per_episode" => Ok(UnprivBasis::PerEpisode),
            _ => Err(Error::Invalid(format!(
                "unknown unprivileged basis '{s}' (expected pool_mean or per_episode)"
            ))),
        }
    }
}

/// Training set for the fusion head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// Unprivileged-group samples with group weights.
    #[default]
    Weighted,
    /// Every training sample with weight 1.
    Uniform,
}

impl FromStr for ProxyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(ProxyMode::Weighted),
            "uniform" => Ok(ProxyMode::Uniform),
            _ => Err(Error::Invalid(format!(
                "unknown proxy mode '{s}' (expected weighted or uniform)"
            ))),
        }
    }
}

/// A report field and whether larger is better.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Accuracy,
    Reward,
    MultiUnfairness,
    Unfairness(String),
}

impl Objective {
    pub fn maximize(&self) -> bool {
        matches!(self, Objective::Accuracy | Objective::Reward)
    }

    pub fn value(&self, report: &FairnessReport) -> Result<f64> {
        match self {
            Objective::Accuracy => Ok(report.overall_accuracy),
            Objective::Reward => Ok(report.reward),
            Objective::MultiUnfairness => Ok(report.multi_unfairness),
            Objective::Unfairness(a) => report
                .unfairness(a)
                .ok_or_else(|| Error::Invalid(format!("no attribute named '{a}'"))),
        }
    }

    /// Every attribute's unfairness (minimized) plus accuracy (maximized).
    pub fn defaults(dataset: &Dataset) -> Vec<Objective> {
        let mut out: Vec<Objective> = dataset
            .schema
            .names()
            .map(|n| Objective::Unfairness(n.to_string()))
            .collect();
        out.push(Objective::Accuracy);
        out
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Accuracy => write!(f, "accuracy"),
            Objective::Reward => write!(f, "reward"),
            Objective::MultiUnfairness => write!(f, "multi_unfairness"),
            Objective::Unfairness(a) => write!(f, "U_{a}"),
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "accuracy" => Objective::Accuracy,
            "reward" => Objective::Reward,
            "multi_unfairness" => Objective::MultiUnfairness,
            _ => match s.strip_prefix("U_") {
                Some(a) if !a.is_empty() => Objective::Unfairness(a.to_string()),
                _ => return Err(Error::Invalid(format!("unknown objective '{s}'"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub policy: PolicyConfig,
    /// Head training; the seed is replaced per structure.
    pub train: TrainConfig,
    pub epsilon: f64,
    pub margin: f64,
    pub exclude_unknown: bool,
    pub unpriv_basis: UnprivBasis,
    pub proxy_mode: ProxyMode,
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
    /// Empty means [`Objective::defaults`].
    pub objectives: Vec<Objective>,
    /// Directory for periodic controller checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// Record wall time per episode (makes history files non-reproducible).
    pub timing: bool,
}

impl SearchConfig {
    pub fn new(space: SearchSpace) -> Self {
        SearchConfig {
            space,
            policy: PolicyConfig::default(),
            train: TrainConfig::default(),
            epsilon: crate::metrics::DEFAULT_EPSILON,
            margin: 0.0,
            exclude_unknown: true,
            unpriv_basis: UnprivBasis::PoolMean,
            proxy_mode: ProxyMode::Weighted,
            episodes: 500,
            seed: 0,
            workers: 1,
            objectives: Vec::new(),
            checkpoint_dir: None,
            checkpoint_every: 50,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.policy.validate()?;
        self.train.validate()?;
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid("epsilon must be positive".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Invalid("margin must be non-negative".into()));
        }
        if self.workers == 0 {
            return Err(Error::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One scored structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub episode: usize,
    /// As sampled; evaluation uses its canonical form.
    pub spec: FusionSpec,
    /// Validation-split report; absent when the episode failed.
    pub report: Option<FairnessReport>,
    pub reward: f64,
    pub error: Option<String>,
    pub seconds: Option<f64>,
}

/// A trained and scored structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub spec: FusionSpec,
    pub head: FusionHead,
    pub report: FairnessReport,
}

/// Splits, unprivileged groups and weights shared by every episode.
pub struct Evaluator<'a> {
    pub dataset: &'a Dataset,
    pub pool: &'a ModelPool,
    pub config: SearchConfig,
    pub splits: SplitAssignment,
    pub unpriv: UnprivilegedMap,
    pub weights: WeightTable,
}

impl<'a> Evaluator<'a> {
    pub fn new(dataset: &'a Dataset, pool: &'a ModelPool, config: SearchConfig) -> Result<Self> {
        config.validate()?;
        pool.validate(dataset)?;
        if config.space.pool_size != pool.len() {
            return Err(Error::Invalid(format!(
                "search space expects {} models, pool has {}",
                config.space.pool_size,
                pool.len()
            )));
        }
        let splits = split_dataset(dataset, config.seed)?;
        let unpriv = identify_unprivileged(
            dataset,
            pool,
            &splits.train,
            config.margin,
            config.exclude_unknown,
        )?;
        let weights = compute_weights(dataset, &splits.train, &unpriv)?;
        Ok(Evaluator {
            dataset,
            pool,
            config,
            splits,
            unpriv,
            weights,
        })
    }

    /// Head-training seed for a structure; independent of when it is met.
    pub fn training_seed(&self, spec: &FusionSpec) -> u64 {
        spec_seed(self.config.seed, &spec.canonical())
    }

    /// Trains the head for `spec` and reports on the validation split.
    pub fn evaluate(&self, spec: &FusionSpec) -> Result<Evaluation> {
        let spec = spec.canonical();
        let head = self.train_head(&spec)?;
        let preds = fused_predictions(self.pool, &spec.selected_models, &head, &self.splits.val)?;
        let report = full_report(&preds, self.dataset, &self.splits.val, self.config.epsilon)?;
        Ok(Evaluation { spec, head, report })
    }

    /// Trains the head for an already canonical `spec`. Without any flagged
    /// group the proxy falls back to the whole training split.
    pub fn train_head(&self, spec: &FusionSpec) -> Result<FusionHead> {
        let selected = &spec.selected_models;
        let head_spec = spec.head_spec(self.dataset.num_classes)?;
        let train_split = &self.splits.train;
        let proxy = match self.config.proxy_mode {
            ProxyMode::Uniform => build_uniform_proxy(self.dataset, self.pool, selected, train_split)?,
            ProxyMode::Weighted => {
                let episode_maps;
                let (unpriv, weights) = match self.config.unpriv_basis {
                    UnprivBasis::PoolMean => (&self.unpriv, &self.weights),
                    UnprivBasis::PerEpisode => {
                        let u = identify_unprivileged_with(
                            self.dataset,
                            self.pool,
                            selected,
                            train_split,
                            self.config.margin,
                            self.config.exclude_unknown,
                        )?;
                        let w = compute_weights(self.dataset, train_split, &u)?;
                        episode_maps = (u, w);
                        (&episode_maps.0, &episode_maps.1)
                    }
                };
                if unpriv.is_empty() {
                    build_uniform_proxy(self.dataset, self.pool, selected, train_split)?
                } else {
                    build_proxy(self.dataset, self.pool, selected, train_split, unpriv, weights)?
                }
            }
        };
        let cfg = TrainConfig {
            seed: self.training_seed(spec),
            ..self.config.train
        };
        let params = if proxy.is_empty() {
            init_mlp(&head_spec, cfg.seed)
        } else {
            train(&head_spec, &proxy, &cfg)?
        };
        Ok(FusionHead {
            spec: head_spec,
            params,
        })
    }

    /// Report of a trained head on any list of sample indices.
    pub fn report_on(&self, spec: &FusionSpec, head: &FusionHead, split: &[usize]) -> Result<FairnessReport> {
        let preds = fused_predictions(self.pool, &spec.canonical().selected_models, head, split)?;
        full_report(&preds, self.dataset, split, self.config.epsilon)
    }

    fn objectives(&self) -> Vec<Objective> {
        if self.config.objectives.is_empty() {
            Objective::defaults(self.dataset)
        } else {
            self.config.objectives.clone()
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot start worker threads: {e}")))
    }
}

/// FNV-1a over a textual rendering of the structure, mixed with the run seed.
fn spec_seed(seed: u64, spec: &FusionSpec) -> u64 {
    let text = format!(
        "{:?}|{}|{:?}|{:?}",
        spec.selected_models, spec.depth, spec.widths, spec.activations
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed for sampling episode `episode` of a run.
fn episode_seed(seed: u64, episode: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (episode as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

type Memo = HashMap<FusionSpec, std::result::Result<Arc<Evaluation>, String>>;

/// Evaluates the specs missing from `memo`, in parallel on `threads`.
fn fill_memo(ev: &Evaluator, threads: &rayon::ThreadPool, specs: &[FusionSpec], memo: &mut Memo) {
    let mut todo: Vec<FusionSpec> = Vec::new();
    for s in specs {
        let c = s.canonical();
        if !memo.contains_key(&c) && !todo.contains(&c) {
            todo.push(c);
        }
    }
    let results: Vec<_> = threads.install(|| {
        todo.par_iter()
            .map(|s| ev.evaluate(s).map(Arc::new).map_err(|e| e.to_string()))
            .collect()
    });
    for (s, r) in todo.into_iter().zip(results) {
        if let Err(e) = &r {
            log::warn!("episode failed for {s:?}: {e}");
        }
        memo.insert(s, r);
    }
}

fn record_for(episode: usize, spec: &FusionSpec, result: &std::result::Result<Arc<Evaluation>, String>) -> SearchRecord {
    match result {
        Ok(e) => SearchRecord {
            episode,
            spec: spec.clone(),
            report: Some(e.report.clone()),
            reward: e.report.reward,
            error: None,
            seconds: None,
        },
        Err(msg) => SearchRecord {
            episode,
            spec: spec.clone(),
            report: None,
            reward: 0.0,
            error: Some(msg.clone()),
            seconds: None,
        },
    }
}

/// Records not dominated under a fixed objective tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub objectives: Vec<Objective>,
    pub records: Vec<SearchRecord>,
}

impl ParetoSet {
    pub fn new(objectives: Vec<Objective>) -> Self {
        ParetoSet {
            objectives,
            records: Vec::new(),
        }
    }

    /// Whether `a` dominates `b`: no worse everywhere, better somewhere.
    pub fn dominates(&self, a: &SearchRecord, b: &SearchRecord) -> bool {
        dominates(&self.objectives, a, b)
    }
}

/// Objective values oriented so that larger is better.
fn point(objectives: &[Objective], r: &SearchRecord) -> Option<Vec<f64>> {
    let report = r.report.as_ref()?;
    objectives
        .iter()
        .map(|o| o.value(report).map(|v| if o.maximize() { v } else { -v }))
        .collect::<Result<Vec<_>>>()
        .ok()
}

fn dominates(objectives: &[Objective], a: &SearchRecord, b: &SearchRecord) -> bool {
    match (point(objectives, a), point(objectives, b)) {
        (Some(pa), Some(pb)) => {
            pa.iter().zip(&pb).all(|(x, y)| x >= y) && pa.iter().zip(&pb).any(|(x, y)| x > y)
        }
        _ => false,
    }
}

/// Inserts `candidate` iff nothing in the set dominates it, dropping the
/// incumbents it dominates. Failed records and structures already present
/// are ignored. Returns whether the candidate was added.
pub fn pareto_update(set: &mut ParetoSet, candidate: SearchRecord) -> bool {
    let objectives = &set.objectives;
    if point(objectives, &candidate).is_none() {
        return false;
    }
    let key = candidate.spec.canonical();
    if set.records.iter().any(|r| r.spec.canonical() == key) {
        return false;
    }
    if set.records.iter().any(|r| dominates(objectives, r, &candidate)) {
        return false;
    }
    set.records.retain(|r| !dominates(objectives, &candidate, r));
    set.records.push(candidate);
    true
}

/// Everything a finished search produces.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub history: Vec<SearchRecord>,
    pub pareto: ParetoSet,
    /// Highest-reward record (earliest on ties).
    pub best: SearchRecord,
    pub best_head: FusionHead,
    pub best_test: FairnessReport,
    pub controller: ControllerParams,
    pub unpriv: UnprivilegedMap,
}

/// Runs the episode loop. With a fixed seed the history does not depend on
/// the worker count: evaluations are deterministic per structure and the
/// controller is updated serially between batches.
pub fn run_search(dataset: &Dataset, pool: &ModelPool, config: &SearchConfig) -> Result<SearchOutcome> {
    if config.episodes == 0 {
        return Err(Error::NoEpisodes);
    }
    let ev = Evaluator::new(dataset, pool, config.clone())?;
    let threads = ev.thread_pool()?;
    let mut controller = ControllerParams::for_space(&config.space, config.policy, config.seed)?;
    let mut pareto = ParetoSet::new(ev.objectives());
    for o in &pareto.objectives {
        if let Objective::Unfairness(a) = o {
            if dataset.schema.attribute_index(a).is_none() {
                return Err(Error::Invalid(format!("objective names unknown attribute '{a}'")));
            }
        }
    }
    let mut memo = Memo::new();
    let mut history: Vec<SearchRecord> = Vec::with_capacity(config.episodes);
    let batch = config.policy.batch_size;

    let mut start = 0;
    while start < config.episodes {
        let end = (start + batch).min(config.episodes);
        let clock = Instant::now();
        let mut sampled = Vec::with_capacity(end - start);
        for e in start..end {
            sampled.push(sample_episode(&controller, &config.space, episode_seed(config.seed, e))?);
        }
        let specs: Vec<FusionSpec> = sampled.iter().map(|s| s.spec.clone()).collect();
        fill_memo(&ev, &threads, &specs, &mut memo);
        let per_episode = clock.elapsed().as_secs_f64() / (end - start) as f64;

        let mut traces = Vec::with_capacity(sampled.len());
        for (k, s) in sampled.into_iter().enumerate() {
            let mut rec = record_for(start + k, &s.spec, &memo[&s.spec.canonical()]);
            if config.timing {
                rec.seconds = Some(per_episode);
            }
            let mut trace = s.trace;
            trace.reward = Some(rec.reward);
            traces.push(trace);
            pareto_update(&mut pareto, rec.clone());
            history.push(rec);
        }
        reinforce_update(&mut controller, &traces)?;

        if let Some(dir) = &config.checkpoint_dir {
            let every = config.checkpoint_every;
            if every > 0 && (end / every > start / every || end == config.episodes) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("controller.json");
                std::fs::write(&path, controller.to_json()?).map_err(|e| Error::io(&path, e))?;
            }
        }
        start = end;
    }

    let best = best_record(&history)
        .ok_or_else(|| Error::Invalid("every episode failed".into()))?
        .clone();
    let eval = memo[&best.spec.canonical()]
        .as_ref()
        .expect("best record was evaluated")
        .clone();
    let best_test = ev.report_on(&eval.spec, &eval.head, &ev.splits.test)?;
    Ok(SearchOutcome {
        history,
        pareto,
        best,
        best_head: eval.head.clone(),
        best_test,
        controller,
        unpriv: ev.unpriv.clone(),
    })
}

/// Highest-reward successful record, earliest on ties.
pub fn best_record(records: &[SearchRecord]) -> Option<&SearchRecord> {
    records
        .iter()
        .filter(|r| r.report.is_some())
        .fold(None, |best: Option<&SearchRecord>, r| match best {
            Some(b) if b.reward >= r.reward => Some(b),
            _ => Some(r),
        })
}

/// Result of exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub best: SearchRecord,
    pub best_head: FusionHead,
    pub best_test: FairnessReport,
    pub evaluated: usize,
}

/// Trains and scores every structure in the space exactly as
/// [`run_search`] would, returning the best. `episode` in the result is the
/// structure's position in enumeration order.
pub fn brute_force_oracle(dataset: &Dataset, pool: &ModelPool, config: &SearchConfig) -> Result<OracleOutcome> {
    config.space.validate()?;
    let count = config.space.count();
    if count > ORACLE_LIMIT {
        return Err(Error::SpaceTooLarge {
            count,
            limit: ORACLE_LIMIT,
        });
    }
    let ev = Evaluator::new(dataset, pool, config.clone())?;
    let threads = ev.thread_pool()?;
    let specs = config.space.enumerate();
    let mut memo = Memo::new();
    fill_memo(&ev, &threads, &specs, &mut memo);
    let records: Vec<SearchRecord> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| record_for(i, s, &memo[s]))
        .collect();
    let best = best_record(&records)
        .ok_or_else(|| Error::Invalid("every structure failed to train".into()))?
        .clone();
    let eval = memo[&best.spec].as_ref().expect("best record was evaluated").clone();
    let best_test = ev.report_on(&eval.spec, &eval.head, &ev.splits.test)?;
    Ok(OracleOutcome {
        best,
        best_head: eval.head.clone(),
        best_test,
        evaluated: records.len(),
    })
}
