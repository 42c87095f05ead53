//! Config-driven experiment runner, report renderer and prediction tool
//! over the `mfgp` models.

pub mod config;
pub mod experiment;
pub mod predict;
pub mod report;
mod svg;

pub use config::{DataConfig, ExperimentConfig, LinearMap, SCHEMA_VERSION};
pub use experiment::{run_experiment, ResultRow, RunOutcome, RESULTS_HEADER};
pub use predict::predict_csv;
pub use report::{read_results, render_report, summarize, SummaryRow};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("all {0} cells failed")]
    AllCellsFailed(usize),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] mfgp::Error),
}

impl CliError {
    /// 2 for bad configs or input files, 3 when every cell failed
    /// numerically, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema(_) => 2,
            CliError::AllCellsFailed(_) => 3,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
