use std::path::{Path, PathBuf};

use enf_core::engine::EngineError;
use enf_core::prune::PruneError;
use enf_core::quant::QuantError;
use enf_core::socsim::SimError;
use enf_core::taskbench::DatasetError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact {path} (run `{stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schedule infeasible: {0}")]
    Infeasible(String),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Stage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::InvalidGraph(_) => 4,
            CliError::Stage(_) => 5,
            CliError::Diverged { .. } => 6,
            CliError::Io { .. } | CliError::Format(_) => 7,
            CliError::Infeasible(_) => 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::InvalidGraph(_) => "invalid_graph",
            CliError::Format(_) => "format",
            CliError::Diverged { .. } => "diverged",
            CliError::Io { .. } => "io",
            CliError::Infeasible(_) => "infeasible",
            CliError::Dataset(_) => "dataset",
            CliError::Stage(_) => "stage",
        }
    }

    pub fn record(&self, stage: &str) -> ErrorRecord {
        ErrorRecord { stage: stage.to_string(), kind: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }
}

/// Contents of `error.json` for a failed stage.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: &'static str,
    pub exit_code: u8,
    pub message: String,
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Diverged { epoch } => CliError::Diverged { epoch },
            EngineError::Graph(_) | EngineError::InvalidGraph(_) | EngineError::UnsupportedInput { .. } => {
                CliError::InvalidGraph(e.to_string())
            }
            EngineError::InvalidConfig(_) | EngineError::LabelMismatch { .. } => CliError::Config(e.to_string()),
            EngineError::ShapeMismatch { .. } => CliError::Stage(e.to_string()),
        }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::Engine(e) => e.into(),
            PruneError::Graph(_) => CliError::InvalidGraph(e.to_string()),
            PruneError::InvalidSchedule(_) => CliError::Config(e.to_string()),
            _ => CliError::Stage(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Graph(_) => CliError::InvalidGraph(e.to_string()),
            _ => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<QuantError> for CliError {
    fn from(e: QuantError) -> Self {
        match e {
            QuantError::Engine(e) => e.into(),
            QuantError::Sim(e) => e.into(),
            QuantError::Graph(_) => CliError::InvalidGraph(e.to_string()),
            _ => CliError::Stage(e.to_string()),
        }
    }
}
