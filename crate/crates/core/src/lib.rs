//! Fairness-driven fusion of frozen classifiers.
//!
//! A pool of off-the-shelf models, reduced to cached class-probability
//! matrices, is searched for subsets whose disagreements a small MLP head can
//! arbitrate so that accuracy gaps between groups shrink on several sensitive
//! attributes at once. A recurrent controller proposes fusion structures and
//! learns from a reward that trades accuracy against per-attribute
//! unfairness.

pub mod controller;
pub mod data;
pub mod error;
pub mod fmt;
pub mod metrics;
pub mod mlp;
pub mod proxy;
pub mod report;
pub mod search;

pub use error::{Error, Result};
