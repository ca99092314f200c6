use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("anchor atoms are collinear or coincident")]
    CollinearAtoms,

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("structure contains no ATOM records")]
    EmptyStructure,

    #[error("cell index out of grid extent for point ({x}, {y}, {z})")]
    OutOfExtent { x: f64, y: f64, z: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{id}: no residue carries a complete, non-collinear CA/N/C triple")]
    NoValidFrame { id: String },

    #[error("patch id {0} is already registered")]
    DuplicatePatchId(String),

    #[error("grid parameters differ: {0}")]
    ParamsMismatch(String),

    #[error("score table references unknown structure key {0}")]
    UnknownRefId(u32),

    #[error("matched count {count} exceeds atom count {atoms} of patch {patch_id}")]
    ScoreOverflow {
        patch_id: String,
        count: u64,
        atoms: u64,
    },

    #[error("{what} is {got}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    #[error("TP rate undefined: R equals I")]
    UndefinedTp,

    #[error("no structure available for source protein {0}")]
    MissingSourceProtein(String),

    #[error("no input patches")]
    EmptyInput,

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("database directory {0} is locked by another writer")]
    Locked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
