//! Run configuration, the CSV/JSON files the CLI emits, and the commands
//! behind each subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::controller::{FusionSpec, PolicyConfig, SearchSpace};
use crate::data::{generate_synthetic, split_dataset, synth, Dataset, ModelPool, SplitName};
use crate::error::{Error, Result};
use crate::fmt::real;
use crate::metrics::{disagreement_breakdown, full_report, FairnessReport, Predictions};
use crate::mlp::{Activation, FusionHead, TrainConfig};
use crate::proxy::identify_unprivileged;
use crate::search::{
    brute_force_oracle, run_search, Objective, ProxyMode, SearchConfig, SearchRecord, UnprivBasis,
};

pub const DATASET_FILE: &str = "dataset.csv";
pub const SCHEMA_FILE: &str = "schema.json";
pub const MANIFEST_FILE: &str = "pool.json";

/// Flat run configuration. Every key is optional in the JSON file; command
/// line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub episodes: usize,
    pub n_select: usize,
    pub depth_choices: Vec<usize>,
    pub width_choices: Vec<usize>,
    pub activations: Vec<Activation>,
    pub pin_model: Option<String>,
    pub hidden_size: usize,
    pub gamma: f64,
    pub baseline_decay: f64,
    /// Episodes per controller update.
    pub batch_episodes: usize,
    pub policy_learning_rate: f64,
    pub head_learning_rate: f64,
    pub head_epochs: usize,
    pub head_batch_size: usize,
    pub epsilon: f64,
    pub margin: f64,
    pub exclude_unknown: bool,
    pub unpriv_basis: UnprivBasis,
    pub proxy_mode: ProxyMode,
    /// Pareto objectives such as `U_age` or `accuracy`; empty means every
    /// attribute's unfairness plus accuracy.
    pub objectives: Vec<String>,
    /// Episodes between controller checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub timing: bool,
    /// Split used by the metrics breakdown.
    pub breakdown_split: SplitName,
}

impl Default for RunConfig {
    fn default() -> Self {
        let space = SearchSpace::new(2);
        let policy = PolicyConfig::default();
        let head = TrainConfig::default();
        RunConfig {
            dataset: None,
            schema: None,
            manifest: None,
            out: PathBuf::from("."),
            seed: 0,
            workers: 1,
            episodes: 500,
            n_select: space.n_select,
            depth_choices: space.depth_choices,
            width_choices: space.width_choices,
            activations: space.activation_choices,
            pin_model: None,
            hidden_size: policy.hidden_size,
            gamma: policy.gamma,
            baseline_decay: policy.baseline_decay,
            batch_episodes: policy.batch_size,
            policy_learning_rate: policy.learning_rate,
            head_learning_rate: head.learning_rate,
            head_epochs: head.epochs,
            head_batch_size: head.batch_size,
            epsilon: crate::metrics::DEFAULT_EPSILON,
            margin: 0.0,
            exclude_unknown: true,
            unpriv_basis: UnprivBasis::PoolMean,
            proxy_mode: ProxyMode::Weighted,
            objectives: Vec::new(),
            checkpoint_every: 50,
            timing: false,
            breakdown_split: SplitName::All,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::load(path, e.line(), e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Points the three input paths at the standard file names in `dir`.
    pub fn use_data_dir(&mut self, dir: &Path) {
        self.dataset = Some(dir.join(DATASET_FILE));
        self.schema = Some(dir.join(SCHEMA_FILE));
        self.manifest = Some(dir.join(MANIFEST_FILE));
    }

    fn input(&self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let p = path
            .clone()
            .ok_or_else(|| Error::Invalid(format!("no {what} path given")))?;
        if !p.is_file() {
            return Err(Error::Invalid(format!("{what} file {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Loads and cross-validates the dataset and pool.
    pub fn load_inputs(&self) -> Result<(Dataset, ModelPool)> {
        let dataset = Dataset::load(
            &self.input(&self.dataset, "dataset")?,
            &self.input(&self.schema, "schema")?,
        )?;
        let pool = ModelPool::load_manifest(&self.input(&self.manifest, "manifest")?, &dataset)?;
        Ok((dataset, pool))
    }

    pub fn search_config(&self, dataset: &Dataset, pool: &ModelPool) -> Result<SearchConfig> {
        let pinned = match &self.pin_model {
            Some(name) => Some(
                pool.index_of(name)
                    .ok_or_else(|| Error::Invalid(format!("no model named '{name}' in the pool")))?,
            ),
            None => None,
        };
        let space = SearchSpace {
            n_select: self.n_select,
            pool_size: pool.len(),
            depth_choices: self.depth_choices.clone(),
            width_choices: self.width_choices.clone(),
            activation_choices: self.activations.clone(),
            pinned,
        };
        let objectives = self
            .objectives
            .iter()
            .map(|o| o.parse::<Objective>())
            .collect::<Result<Vec<_>>>()?;
        for o in &objectives {
            if let Objective::Unfairness(a) = o {
                if dataset.schema.attribute_index(a).is_none() {
                    return Err(Error::Invalid(format!("objective names unknown attribute '{a}'")));
                }
            }
        }
        let config = SearchConfig {
            space,
            policy: PolicyConfig {
                hidden_size: self.hidden_size,
                gamma: self.gamma,
                baseline_decay: self.baseline_decay,
                batch_size: self.batch_episodes,
                learning_rate: self.policy_learning_rate,
            },
            train: TrainConfig {
                learning_rate: self.head_learning_rate,
                epochs: self.head_epochs,
                batch_size: self.head_batch_size,
                seed: 0,
            },
            epsilon: self.epsilon,
            margin: self.margin,
            exclude_unknown: self.exclude_unknown,
            unpriv_basis: self.unpriv_basis,
            proxy_mode: self.proxy_mode,
            episodes: self.episodes,
            seed: self.seed,
            workers: self.workers,
            objectives,
            checkpoint_dir: (self.checkpoint_every > 0).then(|| self.out.join("checkpoints")),
            checkpoint_every: self.checkpoint_every,
            timing: self.timing,
        };
        config.validate()?;
        Ok(config)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_real(field: &str, what: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Invalid(format!("cannot parse {what} '{field}'")))
}

fn parse_opt_real(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_real(field, what).map(Some)
    }
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split_list(field: &str) -> Vec<&str> {
    if field.is_empty() {
        Vec::new()
    } else {
        field.split(';').collect()
    }
}

/// One line of `history.csv` / `pareto.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub episode: usize,
    pub reward: f64,
    /// Empty for failed episodes.
    pub accuracy: Option<f64>,
    pub unfairness: IndexMap<String, Option<f64>>,
    pub selected_models: Vec<String>,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seconds: Option<f64>,
}

impl HistoryRow {
    pub fn from_record(record: &SearchRecord, dataset: &Dataset, pool: &ModelPool) -> Self {
        let names = pool.names();
        HistoryRow {
            episode: record.episode,
            reward: record.reward,
            accuracy: record.report.as_ref().map(|r| r.overall_accuracy),
            unfairness: dataset
                .schema
                .names()
                .map(|a| (a.to_string(), record.report.as_ref().and_then(|r| r.unfairness(a))))
                .collect(),
            selected_models: record
                .spec
                .selected_models
                .iter()
                .map(|&m| names[m].clone())
                .collect(),
            depth: record.spec.depth,
            widths: record.spec.widths.clone(),
            activations: record.spec.activations.clone(),
            seconds: record.seconds,
        }
    }
}

/// `episode,reward,accuracy,<U_attr...>,selected_models,depth,widths,activations,seconds`;
/// list fields are `;`-separated.
pub fn history_csv(rows: &[HistoryRow], attributes: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["episode".to_string(), "reward".into(), "accuracy".into()];
    header.extend(attributes.iter().map(|a| format!("U_{a}")));
    header.extend(
        ["selected_models", "depth", "widths", "activations", "seconds"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.episode.to_string(), real(r.reward), opt_real(r.accuracy)];
        for a in attributes {
            rec.push(opt_real(r.unfairness.get(a).copied().flatten()));
        }
        rec.push(join(&r.selected_models));
        rec.push(r.depth.to_string());
        rec.push(join(&r.widths));
        rec.push(join(&r.activations));
        rec.push(opt_real(r.seconds));
        w.write_record(&rec)?;
    }
    into_string(w)
}

pub fn parse_history_csv(text: &str) -> Result<Vec<HistoryRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 8 || header[..3] != ["episode", "reward", "accuracy"] {
        return Err(Error::Invalid("not a history file".into()));
    }
    let attributes: Vec<String> = header[3..header.len() - 5]
        .iter()
        .map(|h| {
            h.strip_prefix("U_")
                .map(str::to_string)
                .ok_or_else(|| Error::Invalid(format!("unexpected history column '{h}'")))
        })
        .collect::<Result<_>>()?;
    let k = attributes.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let mut unfairness = IndexMap::new();
        for (j, a) in attributes.iter().enumerate() {
            unfairness.insert(a.clone(), parse_opt_real(f(3 + j), "unfairness")?);
        }
        rows.push(HistoryRow {
            episode: f(0)
                .parse()
                .map_err(|_| Error::Invalid(format!("bad episode '{}'", f(0))))?,
            reward: parse_real(f(1), "reward")?,
            accuracy: parse_opt_real(f(2), "accuracy")?,
            unfairness,
            selected_models: split_list(f(3 + k)).into_iter().map(str::to_string).collect(),
            depth: f(4 + k)
                .parse()
                .map_err(|_| Error::Invalid(format!("bad depth '{}'", f(4 + k))))?,
            widths: split_list(f(5 + k))
                .into_iter()
                .map(|w| w.parse().map_err(|_| Error::Invalid(format!("bad width '{w}'"))))
                .collect::<Result<_>>()?,
            activations: split_list(f(6 + k))
                .into_iter()
                .map(str::parse)
                .collect::<Result<_>>()?,
            seconds: parse_opt_real(f(7 + k), "seconds")?,
        });
    }
    Ok(rows)
}

/// One line of `baseline_metrics.csv`: a single pool model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub model: String,
    pub split: SplitName,
    pub accuracy: f64,
    pub unfairness: IndexMap<String, f64>,
    pub multi_unfairness: f64,
    pub reward: f64,
}

pub fn baseline_csv(rows: &[BaselineRow], attributes: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "split".into(), "accuracy".into()];
    header.extend(attributes.iter().map(|a| format!("U_{a}")));
    header.push("multi_unfairness".into());
    header.push("reward".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.model.clone(), r.split.as_str().to_string(), real(r.accuracy)];
        for a in attributes {
            rec.push(real(r.unfairness[a.as_str()]));
        }
        rec.push(real(r.multi_unfairness));
        rec.push(real(r.reward));
        w.write_record(&rec)?;
    }
    into_string(w)
}

pub fn parse_baseline_csv(text: &str) -> Result<Vec<BaselineRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 5 || header[..3] != ["model", "split", "accuracy"] {
        return Err(Error::Invalid("not a baseline metrics file".into()));
    }
    let attributes: Vec<String> = header[3..header.len() - 2]
        .iter()
        .map(|h| h.trim_start_matches("U_").to_string())
        .collect();
    let k = attributes.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let mut unfairness = IndexMap::new();
        for (j, a) in attributes.iter().enumerate() {
            unfairness.insert(a.clone(), parse_real(f(3 + j), "unfairness")?);
        }
        rows.push(BaselineRow {
            model: f(0).to_string(),
            split: f(1).parse()?,
            accuracy: parse_real(f(2), "accuracy")?,
            unfairness,
            multi_unfairness: parse_real(f(3 + k), "multi_unfairness")?,
            reward: parse_real(f(4 + k), "reward")?,
        });
    }
    Ok(rows)
}

/// One line of `breakdown.csv`: a model pair on one unprivileged group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub model_a: String,
    pub model_b: String,
    pub split: SplitName,
    pub attribute: String,
    pub group: String,
    pub count: usize,
    pub both_wrong: f64,
    pub only_a: f64,
    pub only_b: f64,
    pub both_right: f64,
}

pub fn breakdown_csv(rows: &[BreakdownRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model_a", "model_b", "split", "attribute", "group", "count", "both_wrong", "only_a",
        "only_b", "both_right",
    ])?;
    for r in rows {
        w.write_record([
            r.model_a.clone(),
            r.model_b.clone(),
            r.split.as_str().to_string(),
            r.attribute.clone(),
            r.group.clone(),
            r.count.to_string(),
            real(r.both_wrong),
            real(r.only_a),
            real(r.only_b),
            real(r.both_right),
        ])?;
    }
    into_string(w)
}

pub fn parse_breakdown_csv(text: &str) -> Result<Vec<BreakdownRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Structure description with model names next to pool indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSpec {
    pub selected_models: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NamedSpec {
    pub fn new(spec: &FusionSpec, pool: &ModelPool) -> Self {
        let spec = spec.canonical();
        let names = pool.names();
        NamedSpec {
            selected_models: spec.selected_models.iter().map(|&m| names[m].clone()).collect(),
            selected_indices: spec.selected_models.clone(),
            depth: spec.depth,
            widths: spec.widths,
            activations: spec.activations,
        }
    }

    pub fn spec(&self) -> FusionSpec {
        FusionSpec {
            selected_models: self.selected_indices.clone(),
            depth: self.depth,
            widths: self.widths.clone(),
            activations: self.activations.clone(),
        }
    }
}

/// Contents of `best.json` and `oracle_best.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFile {
    pub episode: usize,
    pub reward: f64,
    pub spec: NamedSpec,
    pub head: FusionHead,
    pub validation: FairnessReport,
    pub test: FairnessReport,
    /// `(attribute, group)` pairs the proxy dataset was built from.
    #[serde(default)]
    pub unprivileged: Vec<(String, String)>,
    /// Structures enumerated (oracle only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated: Option<usize>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Generates a preset and writes dataset, schema, manifest and one CSV per
/// model into `out`. Returns the files written and a table of realized
/// group accuracies.
pub fn cmd_synth(
    preset: &str,
    seed: u64,
    complementarity: Option<f64>,
    out: &Path,
) -> Result<(Vec<PathBuf>, String)> {
    let mut config = synth::preset(preset)?;
    if let Some(r) = complementarity {
        config.complementarity = r;
    }
    let (dataset, pool) = generate_synthetic(&config, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let dataset_path = out.join(DATASET_FILE);
    let schema_path = out.join(SCHEMA_FILE);
    dataset.write(&dataset_path, &schema_path)?;
    let mut files = vec![dataset_path, schema_path];
    files.extend(pool.write(&dataset, &out.join(MANIFEST_FILE))?);
    Ok((files, group_accuracy_table(&dataset, &pool)?))
}

fn group_accuracy_table(dataset: &Dataset, pool: &ModelPool) -> Result<String> {
    let all = dataset.all_indices();
    let mut table = String::new();
    for model in &pool.entries {
        let report = full_report(&Predictions(model.predictions(&all)), dataset, &all, 1.0)?;
        let _ = write!(table, "{}: accuracy {:.4}", model.name, report.overall_accuracy);
        for g in &report.per_group_accuracy {
            let _ = write!(table, ", {}={} {:.4}", g.attribute, g.group, g.accuracy);
        }
        table.push('\n');
    }
    Ok(table)
}

/// Baseline rows for every pool model on every split (only `all` when the
/// dataset is too small to split).
pub fn baseline_rows(dataset: &Dataset, pool: &ModelPool, seed: u64, epsilon: f64) -> Result<Vec<BaselineRow>> {
    let splits = split_dataset(dataset, seed).ok();
    let all = dataset.all_indices();
    let mut rows = Vec::new();
    for model in &pool.entries {
        let mut named: Vec<(SplitName, &[usize])> = vec![(SplitName::All, &all)];
        if let Some(s) = &splits {
            named.push((SplitName::Train, &s.train));
            named.push((SplitName::Val, &s.val));
            named.push((SplitName::Test, &s.test));
        }
        for (name, idx) in named {
            let r = full_report(&Predictions(model.predictions(idx)), dataset, idx, epsilon)?;
            rows.push(BaselineRow {
                model: model.name.clone(),
                split: name,
                accuracy: r.overall_accuracy,
                unfairness: r.per_attribute_unfairness,
                multi_unfairness: r.multi_unfairness,
                reward: r.reward,
            });
        }
    }
    Ok(rows)
}

/// Disagreement breakdown of every model pair on every unprivileged group.
/// Groups are flagged on the training split (the whole dataset when it is
/// too small to split) and measured on `split`.
pub fn breakdown_rows(dataset: &Dataset, pool: &ModelPool, config: &RunConfig) -> Result<Vec<BreakdownRow>> {
    let splits = split_dataset(dataset, config.seed).ok();
    let all = dataset.all_indices();
    let (basis, measured): (&[usize], &[usize]) = match &splits {
        Some(s) => (&s.train, s.get(config.breakdown_split).unwrap_or(&all)),
        None if config.breakdown_split == SplitName::All => (&all, &all),
        None => {
            return Err(Error::Invalid(format!(
                "dataset has {} samples, too few to split",
                dataset.len()
            )))
        }
    };
    let unpriv = identify_unprivileged(dataset, pool, basis, config.margin, config.exclude_unknown)?;
    let labels = dataset.labels();
    let preds: Vec<Vec<usize>> = pool.entries.iter().map(|m| m.predictions(&all)).collect();
    let mut rows = Vec::new();
    for a in 0..pool.len() {
        for b in a + 1..pool.len() {
            for (k, g) in unpriv.flagged() {
                let members = dataset.members(k, g, measured);
                if members.is_empty() {
                    continue;
                }
                let bd = disagreement_breakdown(&preds[a], &preds[b], &labels, &members)?;
                let attr = &dataset.schema.attributes[k];
                rows.push(BreakdownRow {
                    model_a: pool.entries[a].name.clone(),
                    model_b: pool.entries[b].name.clone(),
                    split: config.breakdown_split,
                    attribute: attr.name.clone(),
                    group: attr.groups[g].clone(),
                    count: members.len(),
                    both_wrong: bd.both_wrong,
                    only_a: bd.only_a,
                    only_b: bd.only_b,
                    both_right: bd.both_right,
                });
            }
        }
    }
    Ok(rows)
}

fn attribute_names(dataset: &Dataset) -> Vec<String> {
    dataset.schema.names().map(str::to_string).collect()
}

/// Writes `baseline_metrics.csv` and `breakdown.csv` into the output
/// directory.
pub fn cmd_metrics(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let (dataset, pool) = config.load_inputs()?;
    let attrs = attribute_names(&dataset);
    let baseline = baseline_rows(&dataset, &pool, config.seed, config.epsilon)?;
    let breakdown = breakdown_rows(&dataset, &pool, config)?;
    let baseline_path = config.out.join("baseline_metrics.csv");
    let breakdown_path = config.out.join("breakdown.csv");
    write_file(&baseline_path, &baseline_csv(&baseline, &attrs)?)?;
    write_file(&breakdown_path, &breakdown_csv(&breakdown)?)?;
    Ok(vec![baseline_path, breakdown_path])
}

/// Serialized products of one search.
#[derive(Debug, Clone)]
pub struct SearchSummary {
    pub best: BestFile,
    pub history_csv: String,
    pub pareto_csv: String,
    pub controller_json: String,
}

/// Runs the search on loaded inputs and renders its output files.
pub fn summarize_search(config: &RunConfig, dataset: &Dataset, pool: &ModelPool) -> Result<SearchSummary> {
    let search = config.search_config(dataset, pool)?;
    let outcome = run_search(dataset, pool, &search)?;
    let attrs = attribute_names(dataset);
    let rows = |recs: &[SearchRecord]| -> Vec<HistoryRow> {
        recs.iter()
            .map(|r| HistoryRow::from_record(r, dataset, pool))
            .collect()
    };
    let mut frontier = outcome.pareto.records.clone();
    frontier.sort_by_key(|r| r.episode);
    Ok(SearchSummary {
        history_csv: history_csv(&rows(&outcome.history), &attrs)?,
        pareto_csv: history_csv(&rows(&frontier), &attrs)?,
        controller_json: outcome.controller.to_json()?,
        best: BestFile {
            episode: outcome.best.episode,
            reward: outcome.best.reward,
            spec: NamedSpec::new(&outcome.best.spec, pool),
            head: outcome.best_head,
            validation: outcome.best.report.clone().expect("best record has a report"),
            test: outcome.best_test,
            unprivileged: outcome.unpriv.describe(dataset),
            evaluated: None,
        },
    })
}

/// Runs the search and writes `history.csv`, `pareto.csv`, `best.json`,
/// the final controller and periodic controller checkpoints.
pub fn cmd_search(config: &RunConfig) -> Result<BestFile> {
    let (dataset, pool) = config.load_inputs()?;
    let summary = summarize_search(config, &dataset, &pool)?;
    write_file(&config.out.join("history.csv"), &summary.history_csv)?;
    write_file(&config.out.join("pareto.csv"), &summary.pareto_csv)?;
    write_file(&config.out.join("best.json"), &serde_json::to_string_pretty(&summary.best)?)?;
    write_file(&config.out.join("controller.json"), &summary.controller_json)?;
    Ok(summary.best)
}

/// Enumerates the space and writes `oracle_best.json`.
pub fn cmd_oracle(config: &RunConfig) -> Result<BestFile> {
    let (dataset, pool) = config.load_inputs()?;
    let search = config.search_config(&dataset, &pool)?;
    let outcome = brute_force_oracle(&dataset, &pool, &search)?;
    let unpriv = identify_unprivileged(
        &dataset,
        &pool,
        &split_dataset(&dataset, config.seed)?.train,
        config.margin,
        config.exclude_unknown,
    )?;
    let best = BestFile {
        episode: outcome.best.episode,
        reward: outcome.best.reward,
        spec: NamedSpec::new(&outcome.best.spec, &pool),
        head: outcome.best_head,
        validation: outcome.best.report.clone().expect("best record has a report"),
        test: outcome.best_test,
        unprivileged: unpriv.describe(&dataset),
        evaluated: Some(outcome.evaluated),
    };
    write_file(&config.out.join("oracle_best.json"), &serde_json::to_string_pretty(&best)?)?;
    Ok(best)
}
