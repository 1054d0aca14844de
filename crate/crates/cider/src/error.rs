use std::io;
use std::path::PathBuf;

use cider_core::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing configuration key `{key}` ({hint})")]
    MissingKey { key: String, hint: String },
    #[error("{}: schema version {found}, expected {expected}", path.display())]
    SchemaVersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{}: corrupt file: {reason}", path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Core(#[from] cider_core::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 configuration or input, 2 provider, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) => core_exit_code(e),
            Error::Pipeline(e) => core_exit_code(&e.source),
            _ => 1,
        }
    }
}

fn core_exit_code(e: &cider_core::Error) -> i32 {
    use cider_core::Error as E;
    match e {
        E::Invariant(_) | E::SourceBiasMismatch(_) => 3,
        E::InvalidArgument(_) | E::EmptyInput(_) | E::EmptyExemplars => 1,
        _ => 2,
    }
}

impl From<cider_core::bench::BenchError> for Error {
    fn from(e: cider_core::bench::BenchError) -> Self {
        use cider_core::bench::BenchError as B;
        match e {
            B::Schema(s) => Error::Schema(s),
            B::DuplicateId(id) => Error::DuplicateId(id),
            B::Core(e) => Error::Core(e),
        }
    }
}
