//! Trial scoring, score normalization, calibration, fusion and metrics.

mod circle;
mod logreg;
mod metrics;
mod score;
mod trials;

pub use circle::{circle_loss, CircleLoss, CircleLossParams};
pub use logreg::{
    apply_qmf, fuse, fuse_with_model, logreg_loss, stack_scores, train_logreg, LogRegConfig,
    LogRegModel, TrainReport,
};
pub use metrics::{
    compute_eer, compute_mindcf, eer_from_points, mindcf_from_points, operating_points,
    split_by_key, MetricParams,
};
pub use score::{adaptive_norm, as_norm, cosine_score, cross_segment_score, AsNormConfig};
pub use trials::{generate_dev_trials, TrialGenConfig};
