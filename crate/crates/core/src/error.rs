// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),

    #[error("sample {id:?}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_classes: usize,
    },

    #[error("sample {id:?}: unreadable image {path}")]
    UnreadableImage { id: String, path: PathBuf },

    #[error("sample {id:?}: {message}")]
    InvalidSample { id: String, message: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite loss {value} for sample {id:?}")]
    NonFiniteLoss { id: String, value: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unparsable prompt {prompt:?}: {reason}")]
    UnparsablePrompt { prompt: String, reason: String },

    #[error("missing ground-truth metadata for sample {0:?}")]
    MissingGroundTruth(String),

    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("backend {backend:?} failed: {message}")]
    Backend { backend: String, message: String },

    #[error("unregistered {kind} backend {id:?}")]
    UnregisteredBackend { kind: &'static str, id: String },

    #[error("stage {stage} requires upstream stage {upstream} to have completed")]
    MissingUpstream { stage: String, upstream: String },

    #[error("stage {stage} failed: {message} (fix the cause and rerun with --resume)")]
    StageFailed { stage: String, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("id collision: {0:?}")]
    IdCollision(String),

    #[error("{} image(s) failed to decode, first {:?}: {}", .0.len(), .0[0].0, .0[0].1)]
    Decode(Vec<(String, String)>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }
}
