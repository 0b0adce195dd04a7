//! Error types.

use std::path::PathBuf;

use thiserror::Error;

use crate::types::RoutingTrace;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse configuration: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from the model client that are not embedded in a response.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("all {count} candidates failed")]
    AllCandidatesFailed { count: usize },
    #[error("no models to dispatch to")]
    NoModels,
    #[error("mock script '{0}' is not defined")]
    UnknownScript(String),
    #[error("invalid mock script file: {0}")]
    MockScripts(String),
    #[error("http client setup failed: {0}")]
    Http(String),
}

/// Selector ranking errors.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectorError {
    #[error("no usable candidates to rank")]
    NoCandidates,
    #[error("selector reply contains no recognizable ranking")]
    ParseFailure,
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("no eligible models for query")]
    NoEligibleModels,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("model '{0}' is not defined in the config")]
    UnknownModel(String),
    /// Every candidate in a layer failed. Carries the trace up to that point.
    #[error("all candidates failed in layer {layer}")]
    AllCandidatesFailed {
        layer: usize,
        trace: Box<RoutingTrace>,
    },
}

impl RouteError {
    pub fn partial_trace(&self) -> Option<&RoutingTrace> {
        match self {
            RouteError::AllCandidatesFailed { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
