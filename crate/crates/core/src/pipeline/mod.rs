//! Subcommand orchestration over a shared JSON configuration and a work
//! directory of intermediate artifacts.

mod commands;
mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::backbone::BackboneError;
use crate::corpus::CorpusError;
use crate::ensemble::EnsembleError;
use crate::metrics::MetricsError;
use crate::overlay::OverlayError;

pub use commands::{run, EvaluationArtifact, RunArgs, Subcommand, TileIndexEntry};
pub use config::{PipelineConfig, SplitConfig};
pub use report::{AnalysisReport, ExtremeTiles, TileRecord};

/// Exit status for validation failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for runtime failures.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("missing {what} at {path}; run `{after}` first")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        after: &'static str,
    },
    #[error("work directory is locked ({0} exists)")]
    Locked(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 for bad input, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        use CorpusError as C;
        match self {
            PipelineError::Config(_) | PipelineError::Usage(_) => EXIT_VALIDATION,
            PipelineError::Corpus(
                C::MalformedManifest { .. }
                | C::DuplicateId(_)
                | C::MissingImageFile { .. }
                | C::DimensionMismatch { .. }
                | C::ImageTooSmall { .. }
                | C::ClassMissing(_)
                | C::TooFewWorks(_)
                | C::InvalidSplit(_),
            ) => EXIT_VALIDATION,
            PipelineError::Backbone(BackboneError::InvalidConfig(_) | BackboneError::SingleClassData(_)) => {
                EXIT_VALIDATION
            }
            PipelineError::Ensemble(EnsembleError::ClassMissing(_) | EnsembleError::InvalidThreshold(_)) => {
                EXIT_VALIDATION
            }
            _ => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written artifact.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serialises");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Advisory lock on the work directory, released on drop.
pub(crate) struct WorkLock(PathBuf);

impl WorkLock {
    pub(crate) fn acquire(work_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(work_dir).map_err(io_err(work_dir))?;
        let path = work_dir.join(".attrib.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}
