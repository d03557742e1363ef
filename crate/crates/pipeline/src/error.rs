use std::io;

use thiserror::Error;

/// Framing and decoding failures.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("payload of {len} bytes is invalid for tag {tag:#04x}")]
    BadLength { tag: u8, len: usize },
    #[error("field `{field}` must be a nonnegative integer, got {value}")]
    BadInteger { field: &'static str, value: f64 },
    #[error("frame of {0} bytes exceeds the size limit")]
    TooLarge(u32),
    #[error("stream ended inside a frame")]
    Truncated,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Estimation(#[from] dualest_core::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("{0} disconnected before shutdown")]
    Disconnected(String),
    #[error("invalid topology: {0}")]
    Config(String),
    #[error("{role} failed: {cause}")]
    Aborted { role: String, cause: String, partial: Box<crate::topology::ExperimentTrace> },
}

pub type Result<T> = std::result::Result<T, PipelineError>;
