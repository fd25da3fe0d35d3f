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
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("records are not sorted by timestamp (index {index})")]
    Unsorted { index: usize },
    #[error("degenerate centrality: {0} has zero variance")]
    DegenerateCentrality(String),
    #[error("mismatched port sets: {0}")]
    MismatchedPorts(String),
    #[error("pagerank did not converge after {iterations} iterations (last L1 delta {delta:e})")]
    NotConverged {
        iterations: usize,
        delta: f64,
        last: Vec<f64>,
    },
    #[error("node {0} is unreachable from some node; closeness undefined")]
    Unreachable(u64),
    #[error("column {column}: unseen level {level:?}")]
    UnseenLevel { column: String, level: String },
    #[error("column {0} has no observed cells")]
    NoObservedCells(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("class {class} has {count} samples, need at least 2")]
    TooFewInClass { class: u8, count: usize },
    #[error("{0} artifact missing")]
    MissingArtifact(&'static str),
    #[error("refusing to overwrite {0} without --force")]
    WouldOverwrite(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
