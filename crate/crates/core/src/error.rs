use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("lane {lane} references unknown lane {target}")]
    DanglingReference { lane: String, target: String },

    #[error("lane {lane} has a degenerate centerline: {reason}")]
    DegeneratePolyline { lane: String, reason: String },

    #[error("lane adjacency is not symmetric between {a} and {b}")]
    AsymmetricAdjacency { a: String, b: String },

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("start/goal pool is empty: {0}")]
    EmptyPool(String),

    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),

    #[error("invalid action token {token} (lattice has {count} tokens)")]
    InvalidToken { token: usize, count: usize },

    #[error("hitch update requested for a vehicle without a trailer")]
    NotArticulated,

    #[error("expected {expected} action tokens for active agents, got {got}")]
    TokenCount { expected: usize, got: usize },

    #[error("agent {0} is not active")]
    InactiveAgent(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("observation layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("misaligned batch: {0}")]
    MisalignedBatch(String),

    #[error("non-finite loss at iteration {iteration}: {diagnostics}")]
    NonFiniteLoss { iteration: usize, diagnostics: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing reference trajectories: {0}")]
    MissingReference(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DanglingReference { .. } => "dangling_reference",
            Error::DegeneratePolyline { .. } => "degenerate_polyline",
            Error::AsymmetricAdjacency { .. } => "asymmetric_adjacency",
            Error::InvalidParams(_) => "invalid_params",
            Error::EmptyPool(_) => "empty_pool",
            Error::InvalidHorizon(_) => "invalid_horizon",
            Error::InvalidToken { .. } => "invalid_token",
            Error::NotArticulated => "not_articulated",
            Error::TokenCount { .. } => "token_count",
            Error::InactiveAgent(_) => "inactive_agent",
            Error::Domain(_) => "domain",
            Error::LayoutMismatch(_) => "layout_mismatch",
            Error::VersionMismatch(_) => "version_mismatch",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::MisalignedBatch(_) => "misaligned_batch",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Empty(_) => "empty",
            Error::MissingReference(_) => "missing_reference",
            Error::Config(_) => "config",
        }
    }
}
