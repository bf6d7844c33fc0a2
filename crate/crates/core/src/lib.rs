//! Representation-similarity analytics for safety-alignment data curation.
//!
//! Quantifies how similar an upstream safety-alignment corpus is to a
//! downstream fine-tuning corpus in a model's representation space, selects
//! High-Sim / Low-Sim / Random alignment subsets, profiles high-similarity
//! clusters, screens for training-data contamination, aggregates
//! harmfulness/utility metrics, and ranks candidate aligned models by
//! jailbreak risk for a given dataset.

pub mod clustering;
pub mod contamination;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod provenance;
pub mod risk;
pub mod similarity;

pub use error::{Error, ErrorKind, Result};
