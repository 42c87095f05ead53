//! Runs every (model, HF size, repetition) cell of an experiment and
//! writes the results, summaries, traces and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mfgp::bench::{
    eval_rows, lhs_sample, load_dataset_csv, load_nominal_table, run_cell, test_set, CellData, CellOptions, CellOutcome,
    DatasetSchema, ModelKind, ProblemSpec,
};
use mfgp::dataset::FidelityDataset;
use mfgp::nominal::NominalMapping;
use mfgp::num::{DenseMatrix, RngStream};

use crate::config::{DataConfig, ExperimentConfig};
use crate::report::{summarize, write_summary_csv, write_summary_md};
use crate::CliError;

pub const RESULTS_HEADER: &str = "problem,model,hf_size,rep,seed,r2,rmse,mnll,train_seconds,max_jitter,warnings";

/// Points of the prediction grid written for one-dimensional problems.
const PLOT_GRID: usize = 200;

/// One line of `results.csv`. Failed cells carry NaN metrics and a
/// `failed:` warning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub model: ModelKind,
    pub hf_size: usize,
    pub rep: usize,
    pub seed: u64,
    pub r2: f64,
    pub rmse: f64,
    pub mnll: f64,
    pub train_seconds: f64,
    pub max_jitter: f64,
    /// `;`-separated.
    pub warnings: String,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.warnings.split(';').any(|w| w.starts_with("failed:"))
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    pub out_dir: PathBuf,
}

/// Resolved data source of a run.
enum Source {
    Closed(ProblemSpec),
    Data(DataSource),
}

struct DataSource {
    spec: ProblemSpec,
    hf: FidelityDataset,
    lf: Option<FidelityDataset>,
    nominal: NominalMapping,
    test: Option<(DenseMatrix, Vec<f64>)>,
}

struct Cell {
    model: ModelKind,
    hf_size: usize,
    rep: usize,
    seed: u64,
    data: usize,
}

fn single_fidelity(path: &Path, bounds: &[Vec<(f64, f64)>], fidelity: usize) -> Result<FidelityDataset, CliError> {
    let mut sets = load_dataset_csv(path, &DatasetSchema { bounds: bounds.to_vec() }).map_err(schema_error)?;
    match sets.len() {
        1 if sets[0].fidelity == fidelity => Ok(sets.remove(0)),
        _ => Err(CliError::Schema(format!("{}: expected only fidelity-{fidelity} rows", path.display()))),
    }
}

fn schema_error(e: mfgp::Error) -> CliError {
    match e {
        mfgp::Error::Io(m) => CliError::Config(m),
        e @ (mfgp::Error::SchemaMismatch(_) | mfgp::Error::NonFiniteValue(_) | mfgp::Error::MissingNominalRow(_)) => {
            CliError::Schema(e.to_string())
        }
        e => CliError::Core(e),
    }
}

fn load_data(config: &ExperimentConfig, d: &DataConfig) -> Result<DataSource, CliError> {
    let builtin = config.builtin();
    let pick = |given: &Option<Vec<(f64, f64)>>, default: Option<&Vec<(f64, f64)>>, what: &str| {
        given
            .clone()
            .or_else(|| default.cloned())
            .ok_or_else(|| CliError::Config(format!("data.{what} is required without a built-in problem")))
    };
    let lf_bounds = pick(&d.lf_bounds, builtin.as_ref().map(|p| &p.lf_bounds), "lf_bounds")?;
    let hf_bounds = pick(&d.hf_bounds, builtin.as_ref().map(|p| &p.hf_bounds), "hf_bounds")?;
    let bounds = vec![lf_bounds.clone(), hf_bounds.clone()];
    let hf = single_fidelity(&d.hf, &bounds, 2)?;
    let lf = d.lf.as_ref().map(|p| single_fidelity(p, &bounds, 1)).transpose()?;
    let lf_closed = builtin.as_ref().and_then(|p| p.lf);
    if lf.is_none() && lf_closed.is_none() {
        return Err(CliError::Config("data.lf is required when the problem has no closed-form LF".into()));
    }
    let nominal = if let Some(path) = &d.nominal_table {
        let values = load_nominal_table(path, hf.len(), lf_bounds.len()).map_err(schema_error)?;
        NominalMapping::table(
            (0..hf.len()).map(|i| hf.row(i)).collect(),
            (0..values.nrows()).map(|i| values.row(i).iter().copied().collect()).collect(),
        )?
    } else if let Some(lin) = &d.nominal_linear {
        let rows = lin.a.len();
        let cols = lin.a.first().map_or(0, |r| r.len());
        if lin.a.iter().any(|r| r.len() != cols) {
            return Err(CliError::Config("data.nominal_linear.a is ragged".into()));
        }
        let flat: Vec<f64> = lin.a.iter().flatten().copied().collect();
        NominalMapping::linear(DenseMatrix::from_row_slice(rows, cols, &flat), lin.b.clone())
            .map_err(|e| CliError::Config(e.to_string()))?
    } else if let Some(p) = &builtin {
        p.nominal.clone()
    } else {
        return Err(CliError::Config("data needs a nominal map: nominal_table, nominal_linear or a built-in problem".into()));
    };
    if nominal.source_dim() != hf_bounds.len() || nominal.target_dim() != lf_bounds.len() {
        return Err(CliError::Config(format!(
            "nominal map {}->{} does not fit HF dimension {} and LF dimension {}",
            nominal.source_dim(),
            nominal.target_dim(),
            hf_bounds.len(),
            lf_bounds.len()
        )));
    }
    let test = match &d.test {
        Some(p) => {
            let t = single_fidelity(p, &bounds, 2)?;
            Some((t.x.clone(), t.y.iter().copied().collect()))
        }
        None => None,
    };
    let name = d
        .name
        .clone()
        .or_else(|| config.problem.clone())
        .unwrap_or_else(|| "data".to_string());
    let spec = ProblemSpec {
        name,
        lf_bounds,
        hf_bounds,
        lf: lf_closed,
        hf: None,
        nominal: nominal.clone(),
        lf_train_size: builtin.as_ref().map_or(30, |p| p.lf_train_size),
        test_size: 0,
    };
    Ok(DataSource { spec, hf, lf, nominal, test })
}

fn resolve(config: &ExperimentConfig) -> Result<Source, CliError> {
    match &config.data {
        Some(d) => Ok(Source::Data(load_data(config, d)?)),
        None => {
            let p = config.builtin().ok_or_else(|| CliError::Config("no problem".into()))?;
            if p.hf.is_none() {
                return Err(CliError::Config(format!(
                    "problem `{}` has a dataset-backed HF level; supply `data`",
                    p.name
                )));
            }
            Ok(Source::Closed(p))
        }
    }
}

fn unit_grid(bounds: &[(f64, f64)]) -> DenseMatrix {
    let (lo, hi) = bounds[0];
    DenseMatrix::from_fn(PLOT_GRID, 1, |i, _| lo + (hi - lo) * i as f64 / (PLOT_GRID - 1) as f64)
}

/// Builds the shared data of every (HF size, repetition) pair.
fn build_cells_data(config: &ExperimentConfig, source: &Source) -> Result<(Vec<(usize, usize, CellData)>, Vec<String>), CliError> {
    let mut out = Vec::new();
    let mut notes = Vec::new();
    match source {
        Source::Closed(p) => {
            let lf_size = config.lf_size.unwrap_or(p.lf_train_size);
            let test = test_set(p, config.test_size.unwrap_or(p.test_size), config.base_seed)?;
            for &n in &config.hf_sizes {
                for rep in 0..config.repetitions {
                    let seed = config.base_seed + rep as u64;
                    let mut data = CellData::from_problem(p, n, lf_size, seed, test.clone())?;
                    if p.hf_bounds.len() == 1 {
                        data = data.with_plot_grid(unit_grid(&p.hf_bounds))?;
                    }
                    out.push((n, rep, data));
                }
            }
        }
        Source::Data(d) => {
            let (test_x, test_y) = match &d.test {
                Some(t) => t.clone(),
                None => {
                    notes.push("in-sample-test".to_string());
                    (d.hf.x.clone(), d.hf.y.iter().copied().collect())
                }
            };
            let lf_size = config.lf_size.unwrap_or(d.spec.lf_train_size);
            for rep in 0..config.repetitions {
                let seed = config.base_seed + rep as u64;
                let lf = match &d.lf {
                    Some(lf) => lf.clone(),
                    None => {
                        let x = lhs_sample(lf_size, &d.spec.lf_bounds, &mut RngStream::new(seed).split(1));
                        let y = eval_rows(&d.spec, 1, &x)?;
                        FidelityDataset::new(x, y, d.spec.lf_bounds.clone(), 1)?
                    }
                };
                let data = CellData::new(lf, d.hf.clone(), d.nominal.clone(), test_x.clone(), test_y.clone())?;
                out.push((d.hf.len(), rep, data));
            }
        }
    }
    Ok((out, notes))
}

fn cell_stem(model: ModelKind, hf_size: usize, rep: usize) -> String {
    format!("{model}_hf{hf_size}_rep{rep}")
}

/// Runs the experiment and writes its files into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    config.validate()?;
    let source = resolve(config)?;
    let (cells_data, notes) = build_cells_data(config, &source)?;
    let problem = match &source {
        Source::Closed(p) => p,
        Source::Data(d) => &d.spec,
    };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(config).map_err(|e| CliError::Io(e.to_string()))?)?;

    let mut cells = Vec::new();
    for (k, (n, rep, _)) in cells_data.iter().enumerate() {
        for &model in &config.models {
            cells.push(Cell {
                model,
                hf_size: *n,
                rep: *rep,
                seed: config.base_seed + *rep as u64,
                data: k,
            });
        }
    }
    let mut base = CellOptions {
        train: config.effective_train(),
        mnll: config.mnll,
        budget: config.budget_seconds.map(Duration::from_secs_f64),
        ..CellOptions::default()
    };
    base.gp.seed = config.base_seed;

    let run_one = |cell: &Cell| -> (ResultRow, Option<CellOutcome>) {
        let opts = base.seeded(cell.seed);
        let data = &cells_data[cell.data].2;
        log::info!("{} {} hf={} rep={}", problem.name, cell.model, cell.hf_size, cell.rep);
        let outcome = run_cell(cell.model, problem, data, &opts);
        let mut row = ResultRow {
            problem: problem.name.clone(),
            model: cell.model,
            hf_size: cell.hf_size,
            rep: cell.rep,
            seed: cell.seed,
            r2: f64::NAN,
            rmse: f64::NAN,
            mnll: f64::NAN,
            train_seconds: 0.0,
            max_jitter: 0.0,
            warnings: String::new(),
        };
        let mut warnings = notes.clone();
        let outcome = match outcome {
            Ok(o) => {
                row.r2 = o.metrics.r2;
                row.rmse = o.metrics.rmse;
                row.mnll = o.metrics.mnll;
                row.max_jitter = o.max_jitter;
                if config.record_timing {
                    row.train_seconds = o.train_seconds;
                }
                if ![row.r2, row.rmse, row.mnll].iter().all(|v| v.is_finite()) {
                    warnings.push("non-finite-metric".into());
                }
                warnings.extend(o.warnings.iter().cloned());
                Some(o)
            }
            Err(e) => {
                log::warn!("cell {} hf={} rep={} failed: {e}", cell.model, cell.hf_size, cell.rep);
                warnings.push(format!("failed: {e}").replace([',', ';', '\n'], " "));
                None
            }
        };
        row.warnings = warnings.join(";");
        (row, outcome)
    };

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = config.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| CliError::Io(e.to_string()))?
    };
    let results: Vec<(ResultRow, Option<CellOutcome>)> = pool.install(|| cells.par_iter().map(run_one).collect());

    for (cell, (_, outcome)) in cells.iter().zip(&results) {
        if let Some(o) = outcome {
            write_artifacts(config, out_dir, cell, &cells_data[cell.data].2, o)?;
        }
    }
    let mut rows: Vec<ResultRow> = results.into_iter().map(|(r, _)| r).collect();
    rows.sort_by(|a, b| (a.hf_size, a.model, a.rep).cmp(&(b.hf_size, b.model, b.rep)));
    write_results(&out_dir.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&out_dir.join("summary.csv"), &summary)?;
    fs::write(out_dir.join("summary.md"), write_summary_md(&summary))?;
    if rows.iter().all(|r| r.failed()) {
        return Err(CliError::AllCellsFailed(rows.len()));
    }
    Ok(RunOutcome {
        rows,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_artifacts(config: &ExperimentConfig, out_dir: &Path, cell: &Cell, data: &CellData, o: &CellOutcome) -> Result<(), CliError> {
    let stem = cell_stem(cell.model, cell.hf_size, cell.rep);
    if let Some(model) = &o.deep {
        if config.save_traces {
            let dir = out_dir.join("traces");
            fs::create_dir_all(&dir)?;
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
            w.write_record(["iteration", "elbo"])?;
            for (i, v) in model.trace() {
                w.write_record([i.to_string(), v.to_string()])?;
            }
            w.flush()?;
        }
        if config.save_checkpoints {
            let dir = out_dir.join("checkpoints");
            fs::create_dir_all(&dir)?;
            model.save_checkpoint(&dir.join(format!("{stem}.json")))?;
        }
    }
    if let (Some(grid), Some((mean, var))) = (&data.plot_x, &o.plot) {
        let dir = out_dir.join("predictions");
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["x", "mean", "sd"])?;
        for i in 0..grid.nrows() {
            w.write_record([grid[(i, 0)].to_string(), mean[i].to_string(), var[i].sqrt().to_string()])?;
        }
        w.flush()?;
        let design = dir.join(format!("design_hf{}_rep{}.csv", cell.hf_size, cell.rep));
        let mut w = csv::Writer::from_path(design)?;
        w.write_record(["x", "y"])?;
        for i in 0..data.hf.len() {
            w.write_record([data.hf.x[(i, 0)].to_string(), data.hf.y[i].to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
