//! Datasets, cached model pools, splits and synthetic scenarios.

mod dataset;
mod pool;
mod split;
pub mod synth;

pub use dataset::{Attribute, AttributeSchema, Dataset, LabeledSample, SchemaFile};
pub use pool::{argmax, softmax_in_place, ManifestEntry, ModelEntry, ModelPool, ScoreKind, ROW_SUM_TOLERANCE};
pub use split::{split_dataset, SplitAssignment, SplitName};
pub use synth::{generate_synthetic, SyntheticConfig};
