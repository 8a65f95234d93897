use std::path::PathBuf;

use thiserror::Error;

use crate::aligner::AlignError;
use crate::detector::DetectError;
use crate::fst::FstError;
use crate::posterior::StreamError;
use crate::symbols::SymbolError;
use crate::verifier::VerifyError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Fst(#[from] FstError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("stream mismatch: {0}")]
    StreamMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: Box<Error> },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("eval: {0}")]
    Eval(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: impl Into<Error>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(source.into()),
        }
    }
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
