use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mfgp::bench::{self, CellData, CellOptions, ModelKind, MnllVariant};
use mfgp::mfdgp::{MfDgpModel, PredictOptions, TrainConfig};
use mfgp::num::{DenseMatrix, RngStream};

fn err(e: mfgp::Error) -> PyErr {
    match e {
        mfgp::Error::UnknownProblem(_) | mfgp::Error::SchemaMismatch(_) | mfgp::Error::DimensionMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DenseMatrix> {
    mfgp::num::from_rows(rows).map_err(err)
}

/// Names of the built-in benchmark problems.
#[pyfunction]
fn problems() -> Vec<&'static str> {
    bench::PROBLEM_NAMES.to_vec()
}

/// Evaluates a problem's closed-form level at each row of `x`.
#[pyfunction]
fn evaluate(problem: &str, fidelity: usize, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let spec = bench::problem(problem).map_err(err)?;
    bench::eval_rows(&spec, fidelity, &matrix(&x)?).map_err(err)
}

/// Latin hypercube design of `n` points in `bounds`.
#[pyfunction]
fn lhs(n: usize, bounds: Vec<(f64, f64)>, seed: u64) -> Vec<Vec<f64>> {
    mfgp::num::to_rows(&bench::lhs_sample(n, &bounds, &mut RngStream::new(seed)))
}

/// `(r2, rmse, mnll)` of predictions `mean ± sqrt(var)`.
#[pyfunction]
#[pyo3(signature = (y, mean, var, literal = false))]
fn metrics(y: Vec<f64>, mean: Vec<f64>, var: Vec<f64>, literal: bool) -> PyResult<(f64, f64, f64)> {
    let variant = if literal { MnllVariant::Literal } else { MnllVariant::Density };
    let m = bench::compute_metrics(&y, &mean, &var, variant).map_err(err)?;
    Ok((m.r2, m.rmse, m.mnll))
}

/// Fits one model on a fresh design of a built-in problem and scores it on
/// a uniform test set. Returns a dict of metrics and warnings.
#[pyfunction]
#[pyo3(signature = (problem, model, hf_size, seed = 0, iterations = None, test_size = None))]
fn run_cell<'py>(
    py: Python<'py>,
    problem: &str,
    model: &str,
    hf_size: usize,
    seed: u64,
    iterations: Option<usize>,
    test_size: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = bench::problem(problem).map_err(err)?;
    let kind: ModelKind = model.parse().map_err(err)?;
    let mut opts = CellOptions::default().seeded(seed);
    opts.train = TrainConfig {
        iterations: iterations.unwrap_or(TrainConfig::fast().iterations),
        seed,
        ..TrainConfig::default()
    };
    opts.train.validate().map_err(err)?;
    let outcome = py
        .detach(|| {
            let test = bench::test_set(&spec, test_size.unwrap_or(spec.test_size), seed)?;
            let data = CellData::from_problem(&spec, hf_size, spec.lf_train_size, seed, test)?;
            bench::run_cell(kind, &spec, &data, &opts)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("r2", outcome.metrics.r2)?;
    d.set_item("rmse", outcome.metrics.rmse)?;
    d.set_item("mnll", outcome.metrics.mnll)?;
    d.set_item("train_seconds", outcome.train_seconds)?;
    d.set_item("warnings", outcome.warnings)?;
    Ok(d)
}

/// A trained deep model restored from a checkpoint file.
#[pyclass(frozen)]
struct Checkpoint {
    model: MfDgpModel,
}

#[pymethods]
impl Checkpoint {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            model: MfDgpModel::load_checkpoint(&path).map_err(err)?,
        })
    }

    #[getter]
    fn num_fidelities(&self) -> usize {
        self.model.num_fidelities()
    }

    /// Mean and latent variance at `x`, given in the input space of
    /// `input_fidelity` (the highest by default).
    #[pyo3(signature = (x, fidelity, input_fidelity = None, samples = 100, seed = 0))]
    fn predict(
        &self,
        x: Vec<Vec<f64>>,
        fidelity: usize,
        input_fidelity: Option<usize>,
        samples: usize,
        seed: u64,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let x = matrix(&x)?;
        let input = input_fidelity.unwrap_or(self.model.num_fidelities());
        let opts = PredictOptions {
            samples,
            seed,
            zero_noise: false,
        };
        let p = self.model.predict(&x, input, fidelity, &opts).map_err(err)?;
        Ok((p.mean.iter().copied().collect(), p.var.iter().copied().collect()))
    }
}

#[pymodule]
fn mfgp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(problems, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(lhs, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(run_cell, m)?)?;
    m.add_class::<Checkpoint>()?;
    Ok(())
}
