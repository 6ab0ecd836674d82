use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fmt;

/// Tolerance on probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Probability,
    Raw,
}

/// A frozen model, reduced to its class-probability rows over the dataset.
///
/// Rows are aligned to `Dataset::samples`. `Raw` scores are passed through a
/// softmax when loaded, so `probs` always holds probability rows; `kind`
/// records what the source file contained.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub name: String,
    pub kind: ScoreKind,
    num_classes: usize,
    probs: Vec<f64>,
}

impl ModelEntry {
    /// Builds an entry from row-major scores, converting raw scores and
    /// checking the probability invariant. `ids` name the rows for errors.
    pub fn from_rows(
        name: impl Into<String>,
        kind: ScoreKind,
        num_classes: usize,
        rows: Vec<Vec<f64>>,
        ids: Option<&[String]>,
    ) -> Result<Self> {
        let name = name.into();
        let mut probs = Vec::with_capacity(rows.len() * num_classes);
        for (i, mut row) in rows.into_iter().enumerate() {
            let id = ids.map_or_else(|| format!("#{i}"), |ids| ids[i].clone());
            if row.len() != num_classes {
                return Err(Error::Alignment(format!(
                    "model '{name}': sample {id} has {} scores, expected {num_classes}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!(
                    "model '{name}': non-finite score for sample {id}"
                )));
            }
            match kind {
                ScoreKind::Raw => softmax_in_place(&mut row),
                ScoreKind::Probability => {
                    if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                        return Err(Error::Invalid(format!(
                            "model '{name}': score {x} outside [0,1] for sample {id}"
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                        return Err(Error::Invalid(format!(
                            "model '{name}': scores for sample {id} sum to {sum}, not 1"
                        )));
                    }
                }
            }
            probs.extend(row);
        }
        Ok(ModelEntry {
            name,
            kind,
            num_classes,
            probs,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.probs.len() / self.num_classes.max(1)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Predicted class for sample `i`; ties go to the lowest class index.
    pub fn predict(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    pub fn predictions(&self, subset: &[usize]) -> Vec<usize> {
        subset.iter().map(|&i| self.predict(i)).collect()
    }

    /// Reads `sample_id,score_0..score_{M-1}` rows and reorders them to
    /// match `dataset`.
    pub fn load(path: &Path, dataset: &Dataset, name: &str, kind: ScoreKind) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = dataset.num_classes;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::load(path, 1, e.to_string()))?
            .clone();
        let expected: Vec<String> = std::iter::once("sample_id".to_string())
            .chain((0..m).map(|c| format!("score_{c}")))
            .collect();
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != expected {
            return Err(Error::load(
                path,
                1,
                format!("header must be '{}'", expected.join(",")),
            ));
        }
        let index = dataset.id_index();
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; dataset.len()];
        for (r, record) in reader.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| Error::load(path, line, e.to_string()))?;
            if record.len() != m + 1 {
                return Err(Error::load(
                    path,
                    line,
                    format!("expected {} fields, found {}", m + 1, record.len()),
                ));
            }
            let id = record[0].trim();
            let &i = index.get(id).ok_or_else(|| {
                Error::Alignment(format!("outputs for unknown sample {id} in {}", path.display()))
            })?;
            if rows[i].is_some() {
                return Err(Error::load(path, line, format!("duplicate outputs for sample {id}")));
            }
            let scores = record
                .iter()
                .skip(1)
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::load(path, line, format!("bad score '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows[i] = Some(scores);
        }
        let ids: Vec<String> = dataset.samples.iter().map(|s| s.sample_id.clone()).collect();
        let rows = rows
            .into_iter()
            .zip(&ids)
            .map(|(row, id)| {
                row.ok_or_else(|| Error::Alignment(format!("missing outputs for sample {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelEntry::from_rows(name, kind, m, rows, Some(&ids))
    }

    pub fn to_csv(&self, dataset: &Dataset) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("sample_id".to_string())
            .chain((0..self.num_classes).map(|c| format!("score_{c}")))
            .collect();
        w.write_record(&header)?;
        for (i, s) in dataset.samples.iter().enumerate() {
            let row: Vec<String> = std::iter::once(s.sample_id.clone())
                .chain(self.row(i).iter().map(|&x| fmt::real(x)))
                .collect();
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub score_kind: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    pub entries: Vec<ModelEntry>,
}

impl ModelPool {
    pub fn new(entries: Vec<ModelEntry>, dataset: &Dataset) -> Result<Self> {
        let pool = ModelPool { entries };
        pool.validate(dataset)?;
        Ok(pool)
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.entries.len() < 2 {
            return Err(Error::Invalid(format!(
                "model pool needs at least 2 models, found {}",
                self.entries.len()
            )));
        }
        let mut names = HashSet::new();
        for e in &self.entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate model name '{}'", e.name)));
            }
            if e.num_rows() != dataset.len() || e.num_classes() != dataset.num_classes {
                return Err(Error::Alignment(format!(
                    "model '{}' has {}x{} scores, dataset is {}x{}",
                    e.name,
                    e.num_rows(),
                    e.num_classes(),
                    dataset.len(),
                    dataset.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Loads every model listed in a manifest. Relative paths resolve
    /// against the manifest's directory.
    pub fn load_manifest(manifest: &Path, dataset: &Dataset) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let items: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::load(manifest, e.line(), e.to_string()))?;
        let base = manifest.parent().unwrap_or_else(|| Path::new("."));
        let entries = items
            .iter()
            .map(|item| {
                let path = if item.path.is_absolute() {
                    item.path.clone()
                } else {
                    base.join(&item.path)
                };
                ModelEntry::load(&path, dataset, &item.name, item.score_kind)
            })
            .collect::<Result<Vec<_>>>()?;
        ModelPool::new(entries, dataset)
    }

    /// Writes one CSV per model plus `manifest` listing them by file name.
    pub fn write(&self, dataset: &Dataset, manifest: &Path) -> Result<Vec<PathBuf>> {
        let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
        let mut items = Vec::new();
        let mut written = Vec::new();
        for e in &self.entries {
            let file = format!("{}.csv", e.name);
            let path = dir.join(&file);
            fs::write(&path, e.to_csv(dataset)?).map_err(|err| Error::io(&path, err))?;
            items.push(ManifestEntry {
                name: e.name.clone(),
                path: PathBuf::from(file),
                score_kind: ScoreKind::Probability,
            });
            written.push(path);
        }
        let body = serde_json::to_string_pretty(&items)? + "\n";
        fs::write(manifest, body).map_err(|e| Error::io(manifest, e))?;
        written.push(manifest.to_path_buf());
        Ok(written)
    }

    pub fn by_name(&self) -> HashMap<&str, usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.as_str(), i))
            .collect()
    }
}
