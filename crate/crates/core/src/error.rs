use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: u64, len: u64 },

    #[error("hash function {d} out of range (family has {depth})")]
    HashOutOfRange { d: usize, depth: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("all {spares} spare buckets are in use")]
    SpareExhausted { spares: usize },

    #[error("associative store full (capacity {capacity})")]
    CapacityExhausted { capacity: usize },

    #[error("key {0} already present in associative store")]
    DuplicateKey(u64),

    #[error("key {0} absent from associative store")]
    AbsentKey(u64),

    #[error("non-monotonic write to key {key}: {old} -> {new}")]
    NonMonotonic { key: u64, old: u64, new: u64 },

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_index(index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            index: index as u64,
            len: len as u64,
        })
    }
}
