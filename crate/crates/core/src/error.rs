use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("engine is closed")]
    EngineClosed,

    #[error("key too large: {got} bytes (cap {cap})")]
    KeyTooLarge { got: usize, cap: usize },

    #[error("empty key")]
    EmptyKey,

    #[error("block checksum mismatch in {file} at offset {offset}")]
    Corruption { file: PathBuf, offset: u64 },

    #[error("tier {tier} capacity exceeded: {needed} bytes needed, {available} available")]
    TierCapacityExceeded {
        tier: String,
        needed: u64,
        available: u64,
    },

    #[error("unknown tier letter {0:?}")]
    UnknownTier(char),

    #[error("store is not empty")]
    NotEmpty,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),

    #[error("manifest corrupt: {0}")]
    ManifestCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
