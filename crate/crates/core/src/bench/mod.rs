//! Benchmark problems, designs, metrics and the per-cell experiment runner.

pub mod io;
pub mod lhs;
pub mod metrics;
pub mod problems;
pub mod runner;

pub use io::{load_dataset_csv, load_nominal_table, DatasetSchema};
pub use lhs::{lhs_sample, uniform_sample};
pub use metrics::{compute_metrics, mean_log_sd, MetricsReport, MnllVariant};
pub use problems::{eval_problem, eval_rows, nominal_map, problem, ProblemSpec, PROBLEM_NAMES};
pub use runner::{draw_designs, run_cell, test_set, CellData, CellOptions, CellOutcome, ModelKind};
