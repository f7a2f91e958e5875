//! Multi-domain interaction data: catalog, sequences, file formats, splits
//! and statistics.

mod catalog;
mod dsp;
pub mod io;
mod sequence;
mod split;
mod stats;

pub use catalog::{DomainCatalog, DomainId, DomainRole, ItemId};
pub use dsp::{extract_dsp_pairs, pairs_by_domain};
pub use io::{ingest, ingest_with_catalog, IngestOptions};
pub use sequence::{interleave, Corpus, Interaction, MergedSequence, UserRecord, UserSequence};
pub use split::{leave_one_out_split, split_sequences, EvalInstance, LeaveOneOut};
pub use stats::{dataset_stats, DatasetStats, LongTailShares};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("empty input")]
    EmptyInput,
    #[error("sequences of different users: `{0}` and `{1}`")]
    MixedUsers(String, String),
    #[error("duplicate user `{0}`")]
    DuplicateUser(String),
    #[error("events of user `{0}` are not sorted by timestamp")]
    NotSorted(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item `{item}` appears under domains `{first}` and `{second}`")]
    UnknownItemDomain {
        item: String,
        first: String,
        second: String,
    },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
