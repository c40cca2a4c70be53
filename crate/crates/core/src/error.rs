use thiserror::Error;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("capacity exceeded: requested {requested}, limit {capacity}")]
    Capacity { requested: usize, capacity: usize },

    #[error("position {position} out of range (max_position = {max})")]
    Range { position: usize, max: usize },

    #[error("inconsistent state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("generator could not place clues: {0}")]
    Generator(String),

    #[error("bad magic bytes: expected VDET")]
    BadMagic,

    #[error("unsupported container version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch in section {section}")]
    Checksum { section: u32 },

    #[error("malformed record: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
