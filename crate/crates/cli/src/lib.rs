//! Batch front end: reads a run configuration, dispatches to the numerical
//! core and writes CSV/JSON reports.

pub mod config;
mod output;
pub mod run;

use std::path::PathBuf;

use serde_json::Value;

pub use config::RunConfig;
pub use output::{format_number, write_atomically, Artifact};
pub use run::{execute, run_cli, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Standing assumptions failed; carries the validation report.
    #[error("validation failed: {message}")]
    Validation { message: String, report: Value },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Validation { .. } => EXIT_VALIDATION,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Validation { .. } => "validation",
            CliError::Io(_) => "io",
        }
    }

    /// Machine-readable failure record.
    pub fn record(&self) -> Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Validation { report, .. } = self {
            v["validation"] = report.clone();
        }
        v
    }
}

impl From<mfc_core::MfcError> for CliError {
    fn from(e: mfc_core::MfcError) -> Self {
        use mfc_core::MfcError as E;
        match &e {
            E::Config(msg) => CliError::Config(msg.clone()),
            E::Invariant(_) => CliError::Validation { message: e.to_string(), report: Value::Null },
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        cfg.check()
    }
}
