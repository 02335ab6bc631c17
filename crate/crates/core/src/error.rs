use thiserror::Error;

use crate::workload::LayerKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("layer kind {0:?} is not supported by resource {1}")]
    Unsupported(LayerKind, u32),

    #[error("no resource supports layer kinds {0:?}")]
    CapabilityGap(Vec<LayerKind>),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("unknown platform `{0}`")]
    UnknownPlatform(String),

    #[error("unknown template `{0}`")]
    UnknownTemplate(String),

    #[error("split plan has no entry for layer {0}")]
    MissingSplit(usize),

    #[error("graph contains a cycle")]
    Cyclic,

    #[error("no transfer path between resources {0} and {1}")]
    NoPath(u32, u32),

    #[error("refusing brute-force enumeration of {0} elements (limit {1})")]
    GuardExceeded(u64, u64),

    #[error("allocation: {0}")]
    Allocation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
