use std::path::PathBuf;

use thiserror::Error;

/// Validation failures for entailment trees, kept distinct so callers can
/// tell a dangling reference from a structural defect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("step {step} references undefined node {id}")]
    DanglingId { step: usize, id: String },
    #[error("cycle through node {0}")]
    Cycle(String),
    #[error("node {0} is a premise of more than one step")]
    MultipleParents(String),
    #[error("no step concludes the hypothesis")]
    MissingHypothesis,
    #[error("more than one step concludes the hypothesis")]
    DuplicateHypothesis,
    #[error("node {0} is concluded by more than one step")]
    DuplicateConclusion(String),
    #[error("step {step}: {reason}")]
    BadStep { step: usize, reason: String },
    #[error("malformed node id {0:?}")]
    BadId(String),
    #[error("malformed proof: {0}")]
    Syntax(String),
    #[error("intermediate node {0} is never used")]
    Orphan(String),
    #[error("task1 tree leaves must equal its sentences; unused: {0}")]
    Task1Leaves(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("invalid tree: {0}")]
    Tree(#[from] TreeError),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the CLI's one-line error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Index(_) => "index",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Capacity(_) => "capacity",
            Error::Integrity(_) => "integrity",
            Error::Compatibility(_) => "compatibility",
            Error::Tree(_) => "tree",
            Error::Line { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
