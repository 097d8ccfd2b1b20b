use std::io;
use std::path::PathBuf;

use modtrans_core::{DecodeError, ExtractError, GenerateError, TableError, WorkloadParseError};
use thiserror::Error;

use crate::zoo::ZooError;

/// Everything the pipeline and CLI can fail with.
///
/// Each variant belongs to one exit-code class, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: cannot decode ONNX model: {source}")]
    Decode { path: String, source: DecodeError },
    #[error("{path}: not a workload file: {source}")]
    WorkloadParse {
        path: String,
        source: WorkloadParseError,
    },
    #[error("{model}: {source}")]
    Extract { model: String, source: ExtractError },
    #[error("{model}: no initializer passed the layer filter (try --min-rank 1 or --include-all)")]
    NoLayers { model: String },
    #[error("rename map {path}: {source}")]
    RenameMap { path: PathBuf, source: TableError },
    #[error("{}", generate_hint(.0))]
    Generate(GenerateError),
    #[error("{what} {path}: {source}")]
    Table {
        what: &'static str,
        path: PathBuf,
        source: TableError,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Zoo(#[from] ZooError),
}

fn generate_hint(e: &GenerateError) -> String {
    match e {
        GenerateError::MissingActivationTable { .. } => {
            format!("{e}; pass --activation-table FILE with `layer-name bytes` lines")
        }
        GenerateError::MissingHybridTags => {
            format!("{e}; pass --hybrid-map FILE with `layer-name DATA|MODEL` lines")
        }
        _ => e.to_string(),
    }
}

impl From<GenerateError> for Error {
    fn from(e: GenerateError) -> Self {
        Error::Generate(e)
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// 2 decode (and unknown zoo name), 3 extract, 4 generate, 5 I/O.
    /// A diff that finds differences exits 1 without an error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Decode { .. } | Error::WorkloadParse { .. } => 2,
            Error::Extract { .. } | Error::NoLayers { .. } | Error::RenameMap { .. } => 3,
            Error::Generate(_) | Error::Table { .. } => 4,
            Error::Io { .. } => 5,
            Error::Zoo(z) => match z {
                ZooError::UnknownModel(_) => 2,
                ZooError::Manifest(_) => 2,
                _ => 5,
            },
        }
    }
}
