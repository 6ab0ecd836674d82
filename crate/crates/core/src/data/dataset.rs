use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sensitive attribute and the groups it partitions the data into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub groups: Vec<String>,
    #[serde(default)]
    pub unknown_group: Option<String>,
}

impl Attribute {
    pub fn group_index(&self, group: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == group)
    }

    pub fn unknown_index(&self) -> Option<usize> {
        self.unknown_group
            .as_deref()
            .and_then(|g| self.group_index(g))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let schema = AttributeSchema { attributes };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.is_empty() {
            return Err(Error::Invalid("schema declares no attributes".into()));
        }
        let mut names = HashSet::new();
        for attr in &self.attributes {
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Invalid(format!(
                    "duplicate attribute '{}'",
                    attr.name
                )));
            }
            if attr.groups.len() < 2 {
                return Err(Error::Invalid(format!(
                    "attribute '{}' needs at least 2 groups",
                    attr.name
                )));
            }
            let mut groups = HashSet::new();
            for g in &attr.groups {
                if !groups.insert(g.as_str()) {
                    return Err(Error::Invalid(format!(
                        "duplicate group '{g}' in attribute '{}'",
                        attr.name
                    )));
                }
            }
            if let Some(unknown) = &attr.unknown_group {
                if !groups.contains(unknown.as_str()) {
                    return Err(Error::Invalid(format!(
                        "unknown_group '{unknown}' is not a group of attribute '{}'",
                        attr.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub sample_id: String,
    pub label: usize,
    /// Group index per attribute, in schema attribute order.
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub num_classes: usize,
    pub samples: Vec<LabeledSample>,
}

/// On-disk schema document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub num_classes: usize,
    pub attributes: Vec<Attribute>,
}

impl Dataset {
    pub fn new(
        schema: AttributeSchema,
        num_classes: usize,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        let ds = Dataset {
            schema,
            num_classes,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.num_classes == 0 {
            return Err(Error::Invalid("num_classes must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::Invalid(format!(
                    "duplicate sample_id '{}'",
                    s.sample_id
                )));
            }
            if s.label >= self.num_classes {
                return Err(Error::Invalid(format!(
                    "sample '{}' has label {} but num_classes is {}",
                    s.sample_id, s.label, self.num_classes
                )));
            }
            if s.groups.len() != self.schema.len() {
                return Err(Error::Invalid(format!(
                    "sample '{}' has {} group assignments for {} attributes",
                    s.sample_id,
                    s.groups.len(),
                    self.schema.len()
                )));
            }
            for (g, attr) in s.groups.iter().zip(&self.schema.attributes) {
                if *g >= attr.groups.len() {
                    return Err(Error::Invalid(format!(
                        "sample '{}' has group index {g} out of range for attribute '{}'",
                        s.sample_id, attr.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect()
    }

    /// Indices (into `samples`) of the members of `group` under attribute
    /// `attr`, restricted to `subset`.
    pub fn members(&self, attr: usize, group: usize, subset: &[usize]) -> Vec<usize> {
        subset
            .iter()
            .copied()
            .filter(|&i| self.samples[i].groups[attr] == group)
            .collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).collect()
    }

    /// Reads a dataset CSV and its JSON schema.
    pub fn load(dataset_path: &Path, schema_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(schema_path).map_err(|e| Error::io(schema_path, e))?;
        let schema_file: SchemaFile = serde_json::from_str(&text)
            .map_err(|e| Error::load(schema_path, e.line(), e.to_string()))?;
        let schema = AttributeSchema::new(schema_file.attributes)?;
        if schema_file.num_classes == 0 {
            return Err(Error::Invalid("num_classes must be positive".into()));
        }
        let text = fs::read_to_string(dataset_path).map_err(|e| Error::io(dataset_path, e))?;
        Self::parse_csv(&text, dataset_path, schema, schema_file.num_classes)
    }

    fn parse_csv(
        text: &str,
        path: &Path,
        schema: AttributeSchema,
        num_classes: usize,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::load(path, 1, e.to_string()))?
            .clone();
        let expected: Vec<&str> = ["sample_id", "label"]
            .into_iter()
            .chain(schema.names())
            .collect();
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != expected {
            return Err(Error::load(
                path,
                1,
                format!(
                    "header must be '{}', found '{}'",
                    expected.join(","),
                    got.join(",")
                ),
            ));
        }

        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (row, record) in reader.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::load(path, line, e.to_string()))?;
            if record.len() != expected.len() {
                return Err(Error::load(
                    path,
                    line,
                    format!("expected {} fields, found {}", expected.len(), record.len()),
                ));
            }
            let sample_id = record[0].trim().to_string();
            if sample_id.is_empty() {
                return Err(Error::load(path, line, "empty sample_id"));
            }
            if !seen.insert(sample_id.clone()) {
                return Err(Error::load(
                    path,
                    line,
                    format!("duplicate sample_id '{sample_id}'"),
                ));
            }
            let label: usize = record[1].trim().parse().map_err(|_| {
                Error::load(path, line, format!("label '{}' is not an integer", &record[1]))
            })?;
            if label >= num_classes {
                return Err(Error::load(
                    path,
                    line,
                    format!("label {label} out of range for {num_classes} classes"),
                ));
            }
            let mut groups = Vec::with_capacity(schema.len());
            for (k, attr) in schema.attributes.iter().enumerate() {
                let name = record[2 + k].trim();
                let g = attr.group_index(name).ok_or_else(|| {
                    Error::load(
                        path,
                        line,
                        format!("unknown group '{name}' for attribute '{}'", attr.name),
                    )
                })?;
                groups.push(g);
            }
            samples.push(LabeledSample {
                sample_id,
                label,
                groups,
            });
        }
        Dataset::new(schema, num_classes, samples)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string(), "label".to_string()];
        header.extend(self.schema.names().map(String::from));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.sample_id.clone(), s.label.to_string()];
            for (g, attr) in s.groups.iter().zip(&self.schema.attributes) {
                row.push(attr.groups[*g].clone());
            }
            w.write_record(&row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn schema_json(&self) -> Result<String> {
        let doc = SchemaFile {
            num_classes: self.num_classes,
            attributes: self.schema.attributes.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Writes the dataset CSV and schema JSON.
    pub fn write(&self, dataset_path: &Path, schema_path: &Path) -> Result<()> {
        fs::write(dataset_path, self.to_csv()?).map_err(|e| Error::io(dataset_path, e))?;
        fs::write(schema_path, self.schema_json()?).map_err(|e| Error::io(schema_path, e))?;
        Ok(())
    }
}
