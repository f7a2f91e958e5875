//! Adaptive contrastive decoding: rewriting mixed-domain sequences into
//! target-domain sequences with a target expert, per-domain source experts
//! and the shared base model.

mod compose;
mod config;
mod decode;
mod weights;

pub use compose::{
    compose_dataset, write_embeddings_csv, write_mapping_csv, MIN_REGENERATED_LEN, REGENERATED_SUFFIX,
};
pub use config::{DiscardPolicy, Preset, RegenerationConfig, WeightMode};
pub use decode::{
    decide, decide_from, global_score, local_score, regenerate_all, regenerate_sequence, ContrastiveWeights,
    Decision, ExpertSet, MappingRecord, PositionView, RegeneratedSequence, TransformDecision,
};
pub use weights::{entropy, entropy_confidence, jsd};

use crate::corpus::ItemId;
use crate::predictor::PredictorError;

#[derive(Debug, thiserror::Error)]
pub enum ContrastiveError {
    #[error("distribution over {0} item(s) has no meaningful entropy range")]
    DegenerateSupport(usize),
    #[error("distributions have different supports")]
    SupportMismatch,
    #[error("the target domain has no items")]
    EmptyTargetVocab,
    #[error("no expert for source domain `{0}`")]
    MissingExpert(String),
    #[error("{0} distribution required by this configuration is missing")]
    MissingDistribution(&'static str),
    #[error("item {0} is not in the catalog")]
    UnknownItem(ItemId),
    #[error("item {0} belongs to the target domain")]
    NotASourceItem(ItemId),
    #[error("expected a {expected} model, got {found}")]
    WrongRole { expected: String, found: String },
    #[error("invalid regeneration config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}
