//! One experiment cell: draw designs, fit a model, score it on a test set.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::lhs::{lhs_sample, uniform_sample};
use super::metrics::{compute_metrics, MetricsReport, MnllVariant};
use super::problems::{eval_rows, ProblemSpec};
use crate::dataset::{scale_io, FidelityDataset, IoScaling};
use crate::error::{Error, Result};
use crate::exact_gp::{build_bc, build_bc_with_lf, fit_ar1_recursive, fit_exact_gp, imc_calibrate, ExactGpConfig, ImcConfig, ImcResult};
use crate::mfdgp::{build_model, MfDgpModel, NominalInput, PredictOptions, TrainConfig};
use crate::nominal::NominalMapping;
use crate::num::{DenseMatrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    GpHf,
    Ar1,
    Bc,
    Imc,
    MfDgp,
    MfDgpEm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::GpHf,
        ModelKind::Ar1,
        ModelKind::Bc,
        ModelKind::Imc,
        ModelKind::MfDgp,
        ModelKind::MfDgpEm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::GpHf => "gp-hf",
            ModelKind::Ar1 => "ar1",
            ModelKind::Bc => "bc",
            ModelKind::Imc => "imc",
            ModelKind::MfDgp => "mf-dgp",
            ModelKind::MfDgpEm => "mf-dgp-em",
        }
    }

    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::MfDgp | ModelKind::MfDgpEm)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown model `{s}`")))
    }
}

/// Training and test data of one cell, in raw coordinates.
#[derive(Debug, Clone)]
pub struct CellData {
    pub lf: FidelityDataset,
    pub hf: FidelityDataset,
    /// Raw-coordinate map from HF into LF inputs. Tables cover only the HF
    /// training rows.
    pub nominal: NominalMapping,
    /// Nominal mapped value of every HF training row.
    pub nominal_values: DenseMatrix,
    pub test_x: DenseMatrix,
    pub test_y: Vec<f64>,
    /// Extra HF inputs to predict at, outside the metrics (plot grids).
    pub plot_x: Option<DenseMatrix>,
}

/// Draws LHS designs for a closed-form problem. The LF and HF designs use
/// separate streams of `seed`.
pub fn draw_designs(problem: &ProblemSpec, hf_size: usize, lf_size: usize, seed: u64) -> Result<(FidelityDataset, FidelityDataset)> {
    let root = RngStream::new(seed);
    let x_lf = lhs_sample(lf_size, &problem.lf_bounds, &mut root.split(1));
    let x_hf = lhs_sample(hf_size, &problem.hf_bounds, &mut root.split(2));
    let y_lf = eval_rows(problem, 1, &x_lf)?;
    let y_hf = eval_rows(problem, 2, &x_hf)?;
    Ok((
        FidelityDataset::new(x_lf, y_lf, problem.lf_bounds.clone(), 1)?,
        FidelityDataset::new(x_hf, y_hf, problem.hf_bounds.clone(), 2)?,
    ))
}

/// Uniform HF test set shared by every cell of a run.
pub fn test_set(problem: &ProblemSpec, n: usize, seed: u64) -> Result<(DenseMatrix, Vec<f64>)> {
    let x = uniform_sample(n, &problem.hf_bounds, &mut RngStream::new(seed).split(3));
    let y = eval_rows(problem, 2, &x)?;
    Ok((x, y))
}

impl CellData {
    pub fn new(lf: FidelityDataset, hf: FidelityDataset, nominal: NominalMapping, test_x: DenseMatrix, test_y: Vec<f64>) -> Result<Self> {
        if nominal.source_dim() != hf.dim() || nominal.target_dim() != lf.dim() {
            return Err(Error::DimensionMismatch(format!(
                "nominal map {}->{} between HF dimension {} and LF dimension {}",
                nominal.source_dim(),
                nominal.target_dim(),
                hf.dim(),
                lf.dim()
            )));
        }
        if test_x.ncols() != hf.dim() || test_x.nrows() != test_y.len() {
            return Err(Error::DimensionMismatch("test set does not match the HF space".into()));
        }
        let nominal_values = nominal.apply_rows(&hf.x)?;
        Ok(Self {
            lf,
            hf,
            nominal,
            nominal_values,
            test_x,
            test_y,
            plot_x: None,
        })
    }

    pub fn with_plot_grid(mut self, x: DenseMatrix) -> Result<Self> {
        if x.ncols() != self.hf.dim() {
            return Err(Error::DimensionMismatch("plot grid does not match the HF space".into()));
        }
        self.plot_x = Some(x);
        Ok(self)
    }

    /// Test inputs followed by the plot grid.
    fn prediction_inputs(&self) -> DenseMatrix {
        match &self.plot_x {
            None => self.test_x.clone(),
            Some(g) => {
                let (n, m, d) = (self.test_x.nrows(), g.nrows(), self.test_x.ncols());
                DenseMatrix::from_fn(n + m, d, |i, j| if i < n { self.test_x[(i, j)] } else { g[(i - n, j)] })
            }
        }
    }

    /// Closed-form cell: LHS designs from `seed` and the given test set.
    pub fn from_problem(problem: &ProblemSpec, hf_size: usize, lf_size: usize, seed: u64, test: (DenseMatrix, Vec<f64>)) -> Result<Self> {
        let (lf, hf) = draw_designs(problem, hf_size, lf_size, seed)?;
        Self::new(lf, hf, problem.nominal.clone(), test.0, test.1)
    }
}

#[derive(Debug, Clone)]
pub struct CellOptions {
    pub train: TrainConfig,
    pub gp: ExactGpConfig,
    pub imc: ImcConfig,
    pub mnll: MnllVariant,
    /// Wall-clock budget of deep-model training.
    pub budget: Option<Duration>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            gp: ExactGpConfig::default(),
            imc: ImcConfig::default(),
            mnll: MnllVariant::Density,
            budget: None,
        }
    }
}

impl CellOptions {
    /// Copy with every random stream keyed by `seed`.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut o = self.clone();
        o.train.seed = seed;
        o.gp.seed = seed;
        o.imc.seed = seed;
        o
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub metrics: MetricsReport,
    /// Predictive mean and variance (observation noise included) at the
    /// test inputs, raw scale.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub train_seconds: f64,
    pub max_jitter: f64,
    pub warnings: Vec<String>,
    pub deep: Option<MfDgpModel>,
    pub imc: Option<ImcResult>,
    /// Mean and variance at `CellData::plot_x`.
    pub plot: Option<(Vec<f64>, Vec<f64>)>,
}

struct Fitted {
    mean: DVector<f64>,
    var: DVector<f64>,
    max_jitter: f64,
    warnings: Vec<String>,
    deep: Option<MfDgpModel>,
    imc: Option<ImcResult>,
}

fn unscale(sc: &IoScaling, mean: DVector<f64>, var: DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (mean.map(|v| sc.unscale_y(v)), var.map(|v| sc.unscale_var(v)))
}

/// LF data re-expressed in the HF-scaled coordinates, for models that
/// assume one shared input space.
fn lf_in_hf_coords(data: &CellData, sc: &IoScaling) -> Result<FidelityDataset> {
    let x = sc.scale_x(2, &data.lf.x)?;
    let bounds = (0..x.ncols())
        .map(|j| {
            let c = x.column(j);
            (c.min(), c.max())
        })
        .collect();
    Ok(FidelityDataset {
        x,
        y: data.lf.y.map(|v| sc.scale_y(v)),
        bounds,
        fidelity: 1,
    })
}

/// Least-squares affine fit `z ≈ x A + b` of the nominal values, the
/// starting map of IMC when the nominal map is not itself linear.
fn linearize(x: &DenseMatrix, z: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let (n, d) = (x.nrows(), x.ncols());
    let design = DenseMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let svd = design.svd(true, true);
    let coef = svd
        .solve(z, 1e-12)
        .map_err(|e| Error::DegenerateData(format!("nominal linearization: {e}")))?;
    let a = coef.rows(0, d).into_owned();
    let b = coef.row(d).iter().copied().collect();
    Ok((a, b))
}

fn fit_model(kind: ModelKind, problem: &ProblemSpec, data: &CellData, opts: &CellOptions) -> Result<Fitted> {
    let (scaled, sc) = scale_io(&[data.lf.clone(), data.hf.clone()])?;
    let (lf_s, hf_s) = (&scaled[0], &scaled[1]);
    let x_pred = data.prediction_inputs();
    let xt = sc.scale_x(2, &x_pred)?;
    let nominal_s = data.nominal.clone().scaled(data.hf.bounds.clone(), data.lf.bounds.clone())?;
    let mut warnings = Vec::new();
    let fitted = match kind {
        ModelKind::GpHf => {
            let gp = fit_exact_gp(&hf_s.x, &hf_s.y, &opts.gp)?;
            let (m, v) = gp.predict(&xt)?;
            let v = v.add_scalar(gp.noise());
            let (mean, var) = unscale(&sc, m, v);
            Fitted {
                mean,
                var,
                max_jitter: gp.jitter(),
                warnings,
                deep: None,
                imc: None,
            }
        }
        ModelKind::Ar1 => {
            let lf_shared = lf_in_hf_coords(data, &sc)?;
            let ar1 = fit_ar1_recursive(&lf_shared, hf_s, &opts.gp)?;
            let (m, v) = ar1.predict(&xt)?;
            let v = v.add_scalar(ar1.discrepancy.noise());
            let (mean, var) = unscale(&sc, m, v);
            Fitted {
                mean,
                var,
                max_jitter: ar1.max_jitter(),
                warnings,
                deep: None,
                imc: None,
            }
        }
        ModelKind::Bc => {
            let bc = build_bc(lf_s, hf_s, &nominal_s, &opts.gp)?;
            let (m, v) = bc.predict(&xt)?;
            let v = v.add_scalar(bc.discrepancy.noise());
            let (mean, var) = unscale(&sc, m, v);
            Fitted {
                mean,
                var,
                max_jitter: bc.max_jitter(),
                warnings,
                deep: None,
                imc: None,
            }
        }
        ModelKind::Imc => {
            let lf_gp = fit_exact_gp(&lf_s.x, &lf_s.y, &opts.gp)?;
            let (a0, b0) = match &data.nominal {
                NominalMapping::Linear { a, b } => (a.clone(), b.clone()),
                _ => linearize(&data.hf.x, &data.nominal_values)?,
            };
            let result = match problem.lf {
                Some(f) => imc_calibrate(&data.hf, &|z: &[f64]| f(z), &data.lf.bounds, &a0, &b0, &opts.imc)?,
                None => {
                    warnings.push("imc-lf-surrogate".to_string());
                    let surrogate = |z: &[f64]| -> f64 {
                        let zr = DenseMatrix::from_row_slice(1, z.len(), z);
                        sc.scale_x(1, &zr)
                            .and_then(|zs| lf_gp.predict(&zs))
                            .map(|(m, _)| sc.unscale_y(m[0]))
                            .unwrap_or(f64::NAN)
                    };
                    imc_calibrate(&data.hf, &surrogate, &data.lf.bounds, &a0, &b0, &opts.imc)?
                }
            };
            let mapping = result.mapping().scaled(data.hf.bounds.clone(), data.lf.bounds.clone())?;
            let bc = build_bc_with_lf(lf_gp, hf_s, &mapping, &opts.gp)?;
            let (m, v) = bc.predict(&xt)?;
            let v = v.add_scalar(bc.discrepancy.noise());
            let (mean, var) = unscale(&sc, m, v);
            Fitted {
                mean,
                var,
                max_jitter: bc.max_jitter(),
                warnings,
                deep: None,
                imc: Some(result),
            }
        }
        ModelKind::MfDgp | ModelKind::MfDgpEm => {
            let input = if kind == ModelKind::MfDgpEm {
                NominalInput::Values(data.nominal_values.clone())
            } else if data.lf.dim() == data.hf.dim() {
                NominalInput::Frozen {
                    a: DenseMatrix::identity(data.hf.dim(), data.hf.dim()),
                    b: vec![0.0; data.hf.dim()],
                }
            } else if let NominalMapping::Linear { a, b } = &data.nominal {
                NominalInput::Frozen { a: a.clone(), b: b.clone() }
            } else {
                return Err(Error::DimensionMismatch(
                    "mf-dgp needs equal input spaces or a linear nominal map".into(),
                ));
            };
            let mut model = build_model(&[data.lf.clone(), data.hf.clone()], &[input], &opts.train)?;
            let report = model.train(opts.budget)?;
            if report.stopped_on_budget {
                warnings.push(format!("budget-stop@{}", report.iterations));
            }
            if report.skipped_nat_steps > 0 {
                warnings.push(format!("nat-skips={}", report.skipped_nat_steps));
            }
            let pred = model.predict(
                &x_pred,
                2,
                2,
                &PredictOptions {
                    samples: opts.train.predict_samples,
                    seed: opts.train.seed,
                    zero_noise: false,
                },
            )?;
            if pred.untrained {
                warnings.push("untrained".to_string());
            }
            let noise = sc.unscale_var(model.fidelities[1].noise);
            Fitted {
                mean: pred.mean,
                var: pred.var.add_scalar(noise),
                max_jitter: model.max_jitter,
                warnings,
                deep: Some(model),
                imc: None,
            }
        }
    };
    Ok(fitted)
}

/// Fits `kind` on the cell and scores it on the cell's test set.
pub fn run_cell(kind: ModelKind, problem: &ProblemSpec, data: &CellData, opts: &CellOptions) -> Result<CellOutcome> {
    let start = Instant::now();
    let f = fit_model(kind, problem, data, opts)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let n = data.test_y.len();
    let (mean, var) = (f.mean.as_slice(), f.var.as_slice());
    let metrics = compute_metrics(&data.test_y, &mean[..n], &var[..n], opts.mnll)?;
    let plot = data.plot_x.as_ref().map(|_| (mean[n..].to_vec(), var[n..].to_vec()));
    Ok(CellOutcome {
        metrics,
        mean: mean[..n].to_vec(),
        var: var[..n].to_vec(),
        plot,
        train_seconds,
        max_jitter: f.max_jitter,
        warnings: f.warnings,
        deep: f.deep,
        imc: f.imc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::problems::problem;

    #[test]
    fn linearize_recovers_affine_map() {
        let x = DenseMatrix::from_row_slice(4, 2, &[0.0, 0.1, 0.5, 0.9, 0.3, 0.3, 1.0, 0.2]);
        let z = DenseMatrix::from_fn(4, 1, |i, _| 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5);
        let (a, b) = linearize(&x, &z).unwrap();
        assert!((a[(0, 0)] - 2.0).abs() < 1e-10 && (a[(1, 0)] + 1.0).abs() < 1e-10 && (b[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn exact_baselines_run_on_park() {
        let p = problem("park").unwrap();
        let test = test_set(&p, 50, 0).unwrap();
        let data = CellData::from_problem(&p, 8, 30, 1, test).unwrap();
        let opts = CellOptions::default().seeded(1);
        for kind in [ModelKind::GpHf, ModelKind::Bc] {
            let out = run_cell(kind, &p, &data, &opts).unwrap();
            assert!(out.metrics.rmse.is_finite() && out.metrics.mnll.is_finite());
        }
        assert!(run_cell(ModelKind::Ar1, &p, &data, &opts).is_err());
    }
}
