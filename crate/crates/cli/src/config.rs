//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfgp::bench::{problem, MnllVariant, ModelKind, ProblemSpec};
use mfgp::mfdgp::TrainConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: a problem, the models to compare, and the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Built-in problem name. With `data` it supplies default bounds, the
    /// nominal map and the closed-form LF, when any of these exist.
    #[serde(default)]
    pub problem: Option<String>,
    /// User-provided CSV data.
    #[serde(default)]
    pub data: Option<DataConfig>,
    pub models: Vec<ModelKind>,
    /// HF design sizes. Ignored in data mode, where the HF file fixes it.
    #[serde(default)]
    pub hf_sizes: Vec<usize>,
    /// LF design size; defaults to the problem's.
    #[serde(default)]
    pub lf_size: Option<usize>,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Repetition `r` runs with seed `base_seed + r`.
    #[serde(default)]
    pub base_seed: u64,
    /// Size of the uniform test set; defaults to the problem's.
    #[serde(default)]
    pub test_size: Option<usize>,
    /// Shortened deep-model schedule.
    #[serde(default)]
    pub fast: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mnll: MnllVariant,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Wall-clock budget per deep-model cell.
    #[serde(default)]
    pub budget_seconds: Option<f64>,
    /// Write measured training times. Off by default so that a config and
    /// seed determine every output byte.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default = "yes")]
    pub save_traces: bool,
    #[serde(default)]
    pub save_checkpoints: bool,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Label used in result rows; defaults to the problem name or `data`.
    #[serde(default)]
    pub name: Option<String>,
    /// HF training rows, schema `fidelity,x1,...,xd,y`.
    pub hf: PathBuf,
    /// LF training rows. When absent the problem's closed-form LF is
    /// sampled by LHS.
    #[serde(default)]
    pub lf: Option<PathBuf>,
    /// HF test rows. When absent the metrics are computed on the training
    /// rows and each result row carries an `in-sample-test` warning.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Nominal mapped values of the HF rows, schema `hf_row_index,z1,...`.
    #[serde(default)]
    pub nominal_table: Option<PathBuf>,
    /// Linear nominal map `z = x A + b`, `A` given row by row.
    #[serde(default)]
    pub nominal_linear: Option<LinearMap>,
    #[serde(default)]
    pub lf_bounds: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub hf_bounds: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearMap {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let Some(data) = config.data.as_mut() {
            data.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.models.is_empty() {
            return bad("model list is empty".into());
        }
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return bad("model list has duplicates".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.problem.is_none() && self.data.is_none() {
            return bad("either `problem` or `data` is required".into());
        }
        if let Some(name) = &self.problem {
            problem(name).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.data.is_none() && self.hf_sizes.is_empty() {
            return bad("hf_sizes is empty".into());
        }
        if self.hf_sizes.iter().any(|&n| n == 0) || self.lf_size == Some(0) || self.test_size == Some(0) {
            return bad("design and test sizes must be at least 1".into());
        }
        if let Some(b) = self.budget_seconds {
            if !(b > 0.0) {
                return bad("budget_seconds must be positive".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Some(d) = &self.data {
            if d.nominal_table.is_some() && d.nominal_linear.is_some() {
                return bad("give at most one of nominal_table and nominal_linear".into());
            }
        }
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))
    }

    /// Deep-model schedule after `fast` is applied.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if self.fast {
            t.iterations = TrainConfig::fast().iterations;
        }
        t
    }

    /// Built-in problem, if one is named.
    pub fn builtin(&self) -> Option<ProblemSpec> {
        self.problem.as_deref().and_then(|n| problem(n).ok())
    }
}

impl DataConfig {
    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.hf);
        for p in [&mut self.lf, &mut self.test, &mut self.nominal_table].into_iter().flatten() {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"schema_version": 1, "problem": "park", "models": ["gp-hf", "bc"], "hf_sizes": [4]}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.repetitions, 1);
        assert_eq!(c.train, TrainConfig::default());
        assert!(!c.record_timing);
        assert_eq!(c.effective_train().iterations, 28_000);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"schema_version": 2, "problem": "park", "models": ["bc"], "hf_sizes": [4]}"#,
            r#"{"schema_version": 1, "problem": "park", "models": [], "hf_sizes": [4]}"#,
            r#"{"schema_version": 1, "problem": "park", "models": ["bc"], "hf_sizes": [4], "repetitons": 3}"#,
            r#"{"schema_version": 1, "problem": "nope", "models": ["bc"], "hf_sizes": [4]}"#,
            r#"{"schema_version": 1, "problem": "park", "models": ["bc"], "hf_sizes": [0]}"#,
            r#"{"schema_version": 1, "problem": "park", "models": ["bc"], "hf_sizes": [4], "train": {"adam_stp": 1}}"#,
            r#"{"schema_version": 1, "problem": "park", "models": ["svm"], "hf_sizes": [4]}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(CliError::Config(_))), "{text}");
        }
    }
}
