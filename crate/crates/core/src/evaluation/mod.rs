//! Full-ranking next-item metrics, the gradient-conflict diagnostic and the
//! downstream comparison runner.

mod compare;
mod conflict;
mod metrics;

pub use compare::{
    arm_datasets, compare_arms, regenerate_training_split, run_comparison, Arm, ArmResult, ComparisonConfig,
    ComparisonReport, Regeneration,
};
pub use conflict::{gradient_conflict, gradient_conflict_sets, GradientConflictMatrix};

pub use metrics::{
    evaluate, rank_by_scores, rank_of_target, write_metrics_csv, EvalOptions, MetricsAtK, RankingMetrics,
};

use crate::contrastive::ContrastiveError;
use crate::corpus::ItemId;
use crate::predictor::PredictorError;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("target {0} is not among the candidates")]
    TargetNotInCandidates(ItemId),
    #[error("no test instances")]
    EmptyTestSet,
    #[error("a score is NaN")]
    NonFiniteScore,
    #[error("domain `{0}` has no prediction batches")]
    EmptyDomainBatch(String),
    #[error("at least 3 seeds are required, got {0}")]
    TooFewSeeds(usize),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Contrastive(#[from] ContrastiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
