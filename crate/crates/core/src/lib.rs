//! Pseudo-labeling of unlabeled speaker embeddings by progressive multi-view
//! sub-graph clustering, together with the surrounding back-end: domain
//! adaptation, label correction, trial scoring, adaptive score
//! normalization, logistic-regression calibration and fusion, and
//! EER / minDCF evaluation.
//!
//! All public operations are pure and deterministic given their inputs and
//! seeds.

pub mod adaptation;
pub mod backend;
pub mod cluster;
pub mod correction;
pub mod error;
pub mod graph;
pub mod model;
pub mod synth;

mod vecops;

pub use error::{Error, Result};
pub use model::{EmbeddingSet, Partition, ScoreSet, Trial, TrialKey, TrialSet, ViewBundle};
