//! Network change-point detection: learned siamese GCN similarities, an
//! online average-similarity statistic, and classical graph baselines.

pub mod baselines;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod ingest;
pub mod linalg;
pub mod sampling;
pub mod selfsup;
pub mod sgnn;
pub mod synthetic;

pub use error::{Error, Result};
