//! Detection pipeline for low-activity coordinated spam accounts.
//!
//! The pipeline runs ingest → prune → co-appearance graph → features →
//! classifiers → stratified ranking evaluation. [`synthgen`] produces seeded
//! forums with planted spammer cells so every stage can be exercised without
//! real data.

pub mod eval;
pub mod experiment;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod models;
pub mod synthgen;

pub use dormant_autodiff as autodiff;

use chrono::NaiveDate;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autodiff(#[from] dormant_autodiff::AutodiffError),
    #[error("line {line}: {reason}")]
    Rejected { line: usize, reason: String },
    #[error("duplicate article id {0:?}")]
    DuplicateArticle(String),
    #[error("account {0:?} labelled both spammer and normal")]
    ConflictingLabel(String),
    #[error("observation window start {start} must precede end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("dataset container: {0}")]
    Container(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("need at least {needed} accounts, got {got}")]
    TooFewAccounts { needed: usize, got: usize },
    #[error("rows are not aligned to the graph node index: {0}")]
    Misaligned(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("model has not been fitted")]
    NotFitted,
    #[error("AUPRC undefined: labels contain no positives")]
    NoPositives,
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("unknown model {0:?}; expected one of: {}", models::ModelSpec::NAMES.join(", "))]
    UnknownModel(String),
    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
