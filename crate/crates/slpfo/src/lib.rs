pub mod dagpaths;
pub mod engine;
pub mod expansion;
pub mod gen;
pub mod oracle;
pub mod query;
pub mod slp;
pub mod structure;

pub use slp::{DagPath, NodeRep, Slp};
pub use structure::{Pointed, Signature, Structure};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("apex required: {0}")]
    ApexRequired(String),
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
