use std::path::PathBuf;

use kicked_rotor::engine::EngineError;
use kicked_rotor::lattice_map::LatticeError;
use kicked_rotor::modulation::ModulationError;
use kicked_rotor::observables::ObservablesError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("merge: {0}")]
    Merge(String),
    #[error("inconsistent result: {0}")]
    Consistency(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Engine(_) => "engine",
            CliError::Modulation(_) => "modulation",
            CliError::Observables(_) => "observables",
            CliError::Lattice(_) => "lattice_map",
            CliError::Merge(_) => "merge",
            CliError::Consistency(_) => "consistency",
        }
    }

    /// Process exit status: 2 for bad input, 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Merge(_) => 2,
            _ => 1,
        }
    }

    pub fn record(&self, command: &str) -> ErrorRecord {
        ErrorRecord { command: command.to_string(), kind: self.kind().to_string(), message: self.to_string() }
    }
}

/// Machine-readable failure, written as `error.json`.
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: String,
    pub message: String,
}

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
