//! Progressive sub-graph clustering with two-Gaussian merge gating and
//! multi-view voting.

mod combine;
mod em;
mod gmvpg;

pub use combine::{
    cb_new_old, check_combine, decide, subspk_combine, Clause, CombineConfig, CombineDecision,
    MergeTest, ViewSimilarity,
};
pub use em::{fit_two_gaussian, fit_two_gaussian_traced, TwoGaussianFit, VARIANCE_FLOOR};
pub use gmvpg::{
    count_split_events, gmvpg_cluster, AuditEvent, ClusterOutcome, MergeStage, StepSnapshot,
};
