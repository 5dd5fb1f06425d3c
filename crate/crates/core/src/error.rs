use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no edge between nodes {0} and {1}")]
    MissingEdge(usize, usize),

    #[error("duplicate measurement for node pair ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("edge weight {0} outside (0, 1]")]
    InvalidWeight(f64),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("path is broken between nodes {0} and {1}")]
    BrokenPath(usize, usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {key}: {msg}")]
    Config { key: String, msg: String },

    #[error("size mismatch: estimate has {estimate} rotations, truth has {truth}")]
    SizeMismatch { estimate: usize, truth: usize },

    #[error("cost function argument {0} is negative")]
    Domain(f64),

    #[error("could not draw a connected graph after {0} attempts")]
    NotConnected(usize),

    #[error("numerical degeneracy: {0}")]
    Degenerate(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
