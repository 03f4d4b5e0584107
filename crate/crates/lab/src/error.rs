use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{count} run(s) did not converge:\n{report}")]
    NonConvergence { count: usize, report: String },
    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("acceptance band missed: {0}")]
    Band(String),
    #[error(transparent)]
    Core(#[from] vme_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },
}

pub type LabResult<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// Process exit status: 2 configuration, 3 non-convergence, 4 missing
    /// artifact, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) => 2,
            LabError::NonConvergence { .. } => 3,
            LabError::MissingArtifact { .. } => 4,
            _ => 1,
        }
    }
}
