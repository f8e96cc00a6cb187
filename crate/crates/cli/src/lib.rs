//! Command-line pipelines over `fbeval-core`: ingest, parse, forge, calibrate and evaluate,
//! with run directories keyed by configuration hash.

pub mod commands;
pub mod config;
pub mod inputs;
pub mod report;
pub mod rundir;

use std::path::PathBuf;

pub use commands::{rerender, run, Command, Outcome};
pub use config::{LoadedConfig, Mode, PipelineConfig};
pub use report::{render_report, Cell, EvalReport, Format, Section, Table};
pub use rundir::RunDir;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PIPELINE: i32 = 3;
pub const EXIT_JUDGE_FORMAT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{command}{}: {source}", .paper_id.as_ref().map(|p| format!(" (paper {p})")).unwrap_or_default())]
    Pipeline {
        command: String,
        paper_id: Option<String>,
        #[source]
        source: fbeval_core::Error,
    },

    #[error("{command}: {message}")]
    Input { command: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run directory {0} is locked by another process (remove its `lock` file if stale)")]
    Locked(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Pipeline { source, .. } if source.is_judge_format() => EXIT_JUDGE_FORMAT,
            _ => EXIT_PIPELINE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
