use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyKeepSet: softmax needs at least one kept index")]
    EmptyKeepSet,
    #[error("NonFiniteInput: {0}")]
    NonFiniteInput(String),
    #[error("BadToken: token id {token} out of range for vocabulary of {vocab}")]
    BadToken { token: usize, vocab: usize },
    #[error("BadAlpha: forgetting factor {0} must lie in [0, 1)")]
    BadAlpha(f64),
    #[error("BadWindow: local window must be at least 1")]
    BadWindow,
    #[error("RowShapeMismatch: {0}")]
    RowShapeMismatch(String),
    #[error("EmptyHead: layer {layer} head {head} has no live tokens")]
    EmptyHead { layer: usize, head: usize },
    #[error("UnknownToken: token {token} is not live in layer {layer} head {head}")]
    UnknownToken {
        layer: usize,
        head: usize,
        token: usize,
    },
    #[error("ZeroBudget: cache budget resolved to 0")]
    ZeroBudget,
    #[error("BudgetTooSmallForHybrid: hybrid local+selective split needs a budget of at least 2, got {0}")]
    BudgetTooSmallForHybrid(usize),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("ZeroVector: cosine similarity is undefined for an all-zero input ({0})")]
    ZeroVector(String),
    #[error("BadMagic: expected \"A2TR\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("UnsupportedVersion: trace format version {0}")]
    UnsupportedVersion(u32),
    #[error("ChecksumMismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("InvariantViolation at layer {layer} head {head} q {q} k {k}: {reason}")]
    InvariantViolation {
        layer: usize,
        head: usize,
        q: usize,
        k: usize,
        reason: String,
    },
    #[error("Malformed: {0}")]
    Malformed(String),
    #[error("NothingToWrite: report list is empty")]
    NothingToWrite,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than I/O or data corruption.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::BadAlpha(_)
                | Error::BadWindow
                | Error::ZeroBudget
                | Error::BudgetTooSmallForHybrid(_)
                | Error::InvalidConfig(_)
                | Error::BadToken { .. }
        )
    }
}
