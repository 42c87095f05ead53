//! Exact GP regression and the closed-form multi-fidelity baselines.

use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::DVector;

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::kernels::{se_ard_cov, SeArdParams, LENGTHSCALE_FLOOR, VARIANCE_FLOOR};
use crate::nominal::NominalMapping;
use crate::num::{
    cholesky_psd, logdet_from_chol, tri_solve, DenseMatrix, RngStream, Side, Tape, DEFAULT_JITTER_LADDER,
};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_LS_MAX: f64 = 9.210_340_371_976_184; // ln 1e4
const LOG_VAR_MAX: f64 = 18.420_680_743_952_367; // ln 1e8
const FAILED_COST: f64 = 1e25;
// Range of log lengthscales for the grid and random starts (unit-box inputs).
const LOG_LS_GRID: (f64, f64) = (-2.0 * std::f64::consts::LN_10, std::f64::consts::LN_10);
const GRID_POINTS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactGpConfig {
    pub restarts: usize,
    pub noise_floor: f64,
    /// Skip noise estimation and use this value.
    pub fixed_noise: Option<f64>,
    /// Use this constant mean instead of the GLS estimate.
    pub fixed_mean: Option<f64>,
    pub max_iters: u64,
    pub seed: u64,
}

impl Default for ExactGpConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            noise_floor: 1e-6,
            fixed_noise: None,
            fixed_mean: None,
            max_iters: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanSpec {
    Fixed(f64),
    /// Generalized least-squares estimate given the kernel.
    Profiled,
}

/// Fitted exact GP with constant mean.
#[derive(Debug, Clone)]
pub struct ExactGpModel {
    x: DenseMatrix,
    y: DVector<f64>,
    params: SeArdParams,
    noise: f64,
    mean: f64,
    lower: DenseMatrix,
    alpha: DVector<f64>,
    jitter: f64,
    log_likelihood: f64,
}

/// GLS coefficients of `basis` for targets `y` under covariance `L Lᵀ`.
fn gls(lower: &DenseMatrix, y: &DVector<f64>, basis: &DenseMatrix) -> Result<Vec<f64>> {
    let ly = tri_solve(lower, &DenseMatrix::from_column_slice(y.len(), 1, y.as_slice()), Side::Forward)?;
    let lh = tri_solve(lower, basis, Side::Forward)?;
    let a = lh.transpose() * &lh;
    let b = lh.transpose() * ly;
    let sol = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| a.svd(true, true).solve(&b, 1e-12).ok())
        .ok_or_else(|| Error::DegenerateData("mean basis is rank deficient".into()))?;
    Ok(sol.iter().copied().collect())
}

impl ExactGpModel {
    /// Builds the posterior cache for fixed hyperparameters.
    pub fn with_params(x: DenseMatrix, y: DVector<f64>, params: SeArdParams, noise: f64, mean: MeanSpec) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch(x.nrows(), y.len()));
        }
        if x.nrows() == 0 {
            return Err(Error::DegenerateData("no training points".into()));
        }
        if !(noise >= 0.0) {
            return Err(Error::NegativeVariance(noise));
        }
        let mut k = se_ard_cov(&x, &x, &params)?;
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        let chol = cholesky_psd(&k, &DEFAULT_JITTER_LADDER)?;
        let mean = match mean {
            MeanSpec::Fixed(m) => m,
            MeanSpec::Profiled => gls(&chol.lower, &y, &DenseMatrix::from_element(y.len(), 1, 1.0))?[0],
        };
        let r = y.add_scalar(-mean);
        let a1 = tri_solve(&chol.lower, &DenseMatrix::from_column_slice(r.len(), 1, r.as_slice()), Side::Forward)?;
        let quad = a1.norm_squared();
        let alpha = tri_solve(&chol.lower, &a1, Side::Backward)?;
        let n = y.len() as f64;
        let log_likelihood = -0.5 * quad - 0.5 * logdet_from_chol(&chol.lower) - 0.5 * n * LOG_2PI;
        Ok(Self {
            x,
            y,
            params,
            noise,
            mean,
            alpha: DVector::from_column_slice(alpha.as_slice()),
            lower: chol.lower,
            jitter: chol.jitter,
            log_likelihood,
        })
    }

    pub fn params(&self) -> &SeArdParams {
        &self.params
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Log marginal likelihood at the stored parameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean and latent variance at the rows of `xs`.
    pub fn predict(&self, xs: &DenseMatrix) -> Result<(DVector<f64>, DVector<f64>)> {
        if xs.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} inputs, prediction points have {}",
                self.dim(),
                xs.ncols()
            )));
        }
        let ks = se_ard_cov(&self.x, xs, &self.params)?;
        let mean = (ks.transpose() * &self.alpha).add_scalar(self.mean);
        let v = tri_solve(&self.lower, &ks, Side::Forward)?;
        let var = DVector::from_fn(xs.nrows(), |j, _| {
            let s = self.params.variance - v.column(j).norm_squared();
            if s < -1e-10 {
                log::debug!("posterior variance {s:e} clamped to zero");
            }
            s.max(0.0)
        });
        Ok((mean, var))
    }
}

/// Hyperparameters decoded from an unconstrained vector
/// `[log ℓ_1..d, log v, log(σ² − floor)]`.
fn decode(u: &[f64], d: usize, noise: NoiseMode) -> (Vec<f64>, f64, f64) {
    let ls = u[..d]
        .iter()
        .map(|v| v.clamp(LENGTHSCALE_FLOOR.ln(), LOG_LS_MAX).exp())
        .collect();
    let var = u[d].clamp(VARIANCE_FLOOR.ln(), LOG_VAR_MAX).exp();
    let noise = match noise {
        NoiseMode::Fixed(s) => s,
        NoiseMode::Learn { floor } => floor + u[d + 1].clamp(-40.0, LOG_VAR_MAX).exp(),
    };
    (ls, var, noise)
}

#[derive(Debug, Clone, Copy)]
enum NoiseMode {
    Fixed(f64),
    Learn { floor: f64 },
}

/// Negative log marginal likelihood with the mean coefficients of `basis`
/// profiled by GLS (or fixed).
struct LmlProblem<'a> {
    x: &'a DenseMatrix,
    y: &'a DVector<f64>,
    basis: &'a DenseMatrix,
    fixed_beta: Option<Vec<f64>>,
    noise: NoiseMode,
    best: Mutex<Option<(f64, Vec<f64>)>>,
}

impl LmlProblem<'_> {
    fn eval(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = self.x.ncols();
        let n = self.x.nrows();
        let t = Tape::new();
        let xl = t.leaf(self.x.clone());
        let clamp_leaf = |v: f64, lo: f64, hi: f64| (t.scalar(v.clamp(lo, hi)), v < lo || v > hi);
        let log_ls = t.leaf(DenseMatrix::from_fn(1, d, |_, j| u[j].clamp(LENGTHSCALE_FLOOR.ln(), LOG_LS_MAX)));
        let (log_var, _) = clamp_leaf(u[d], VARIANCE_FLOOR.ln(), LOG_VAR_MAX);
        let k = t.se_cov(xl, xl, log_ls, log_var);
        let (kn, noise_leaf) = match self.noise {
            NoiseMode::Fixed(s) => (t.add_diag_const(k, s), None),
            NoiseMode::Learn { floor } => {
                let (un, _) = clamp_leaf(u[d + 1], -40.0, LOG_VAR_MAX);
                let s = t.add_scalar_const(t.exp(un), floor);
                let eye = t.leaf(DenseMatrix::identity(n, n));
                (t.add(k, t.mul_scalar(eye, s)), Some(un))
            }
        };
        let l = t.cholesky(kn);
        t.check().ok()?;
        let beta = match &self.fixed_beta {
            Some(b) => b.clone(),
            None => gls(&t.value(l), self.y, self.basis).ok()?,
        };
        let r = self.y - self.basis * DVector::from_vec(beta);
        let rl = t.leaf(DenseMatrix::from_column_slice(n, 1, r.as_slice()));
        let a = t.solve_lower(l, rl);
        let quad = t.sum(t.square(a));
        let logdet = t.sum(t.log(t.diag(l)));
        let obj = t.add_scalar_const(t.add(t.scale(quad, 0.5), logdet), 0.5 * n as f64 * LOG_2PI);
        let f = t.scalar_value(obj);
        if !f.is_finite() {
            return None;
        }
        let g = t.gradients(obj);
        let mut grad: Vec<f64> = g.get(log_ls).iter().copied().collect();
        grad.push(g.scalar(log_var));
        if let Some(un) = noise_leaf {
            grad.push(g.scalar(un));
        }
        // Zero the gradient of coordinates sitting outside their clamp box.
        let lo_hi = |i: usize| -> (f64, f64) {
            if i < d {
                (LENGTHSCALE_FLOOR.ln(), LOG_LS_MAX)
            } else if i == d {
                (VARIANCE_FLOOR.ln(), LOG_VAR_MAX)
            } else {
                (-40.0, LOG_VAR_MAX)
            }
        };
        for (i, gi) in grad.iter_mut().enumerate() {
            let (lo, hi) = lo_hi(i);
            if u[i] < lo || u[i] > hi {
                *gi = 0.0;
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut best = self.best.lock().expect("poisoned");
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            *best = Some((f, u.to_vec()));
        }
        Some((f, grad))
    }
}

impl CostFunction for LmlProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(u).map_or(FAILED_COST, |(f, _)| f))
    }
}

impl Gradient for LmlProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        self.eval(u)
            .map(|(_, g)| g)
            .ok_or_else(|| argmin::core::Error::msg("log-likelihood evaluation failed"))
    }
}

/// Result of a hyperparameter search.
struct HyperFit {
    params: SeArdParams,
    noise: f64,
    beta: Vec<f64>,
}

fn fit_hypers(
    x: &DenseMatrix,
    y: &DVector<f64>,
    basis: &DenseMatrix,
    fixed_beta: Option<Vec<f64>>,
    config: &ExactGpConfig,
) -> Result<HyperFit> {
    let d = x.ncols();
    let noise = match config.fixed_noise {
        Some(s) => NoiseMode::Fixed(s),
        None => NoiseMode::Learn {
            floor: config.noise_floor,
        },
    };
    let problem = LmlProblem {
        x,
        y,
        basis,
        fixed_beta: fixed_beta.clone(),
        noise,
        best: Mutex::new(None),
    };
    let start = |log_ls: &[f64], log_var: f64| -> Vec<f64> {
        let mut u = log_ls.to_vec();
        u.push(log_var);
        if let NoiseMode::Learn { floor } = noise {
            u.push((1e-2 - floor).max(1e-12).ln());
        }
        u
    };
    // Short lengthscales are invisible to descent from a smooth start on
    // oscillating data, so the first start is the best of a coarse
    // isotropic grid.
    let grid_start = (0..=GRID_POINTS)
        .map(|k| LOG_LS_GRID.0 + (LOG_LS_GRID.1 - LOG_LS_GRID.0) * k as f64 / GRID_POINTS as f64)
        .filter_map(|l| {
            let u = start(&vec![l; d], 0.0);
            problem.eval(&u).map(|(f, _)| (f, u))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, u)| u);
    let mut rng = RngStream::new(config.seed);
    let starts = (0..config.restarts.max(1)).map(|restart| {
        let log_ls: Vec<f64> = (0..d)
            .map(|_| if restart == 0 { 0.0 } else { rng.uniform_range(LOG_LS_GRID.0, LOG_LS_GRID.1) })
            .collect();
        start(&log_ls, 0.0)
    });
    let starts: Vec<Vec<f64>> = grid_start.into_iter().chain(starts).collect();
    for u in starts {
        if problem.eval(&u).is_none() {
            continue;
        }
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
            .with_tolerance_grad(1e-7)
            .map_err(|e| Error::DegenerateData(e.to_string()))?;
        // Failures inside the line search are tolerated: the problem keeps
        // the best point it has seen.
        let _ = Executor::new(&problem, solver)
            .configure(|s| s.param(u).max_iters(config.max_iters))
            .run();
    }
    let best = problem.best.lock().expect("poisoned").take();
    let (_, u) = best.ok_or(Error::NotPositiveDefinite {
        jitter: *DEFAULT_JITTER_LADDER.last().unwrap(),
    })?;
    let (ls, var, noise_val) = decode(&u, d, noise);
    let params = SeArdParams::new(ls, var)?;
    let beta = match fixed_beta {
        Some(b) => b,
        None => {
            let mut k = se_ard_cov(x, x, &params)?;
            for i in 0..k.nrows() {
                k[(i, i)] += noise_val;
            }
            gls(&cholesky_psd(&k, &DEFAULT_JITTER_LADDER)?.lower, y, basis)?
        }
    };
    Ok(HyperFit {
        params,
        noise: noise_val,
        beta,
    })
}

impl<'a> CostFunction for &LmlProblem<'a> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        (**self).cost(u)
    }
}

impl<'a> Gradient for &LmlProblem<'a> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        (**self).gradient(u)
    }
}

fn check_rows(x: &DenseMatrix, y_len: usize, config: &ExactGpConfig) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::DegenerateData(format!("need at least 2 points, got {}", x.nrows())));
    }
    if x.nrows() != y_len {
        return Err(Error::LengthMismatch(x.nrows(), y_len));
    }
    if config.fixed_noise == Some(0.0) {
        for i in 0..x.nrows() {
            for j in 0..i {
                if x.row(i) == x.row(j) {
                    return Err(Error::DegenerateData(format!("rows {j} and {i} coincide with zero noise")));
                }
            }
        }
    }
    Ok(())
}

/// Maximum-likelihood fit of an SE-ARD GP with constant mean.
pub fn fit_exact_gp(x: &DenseMatrix, y: &DVector<f64>, config: &ExactGpConfig) -> Result<ExactGpModel> {
    check_rows(x, y.len(), config)?;
    let ones = DenseMatrix::from_element(y.len(), 1, 1.0);
    let fit = fit_hypers(x, y, &ones, config.fixed_mean.map(|m| vec![m]), config)?;
    ExactGpModel::with_params(x.clone(), y.clone(), fit.params, fit.noise, MeanSpec::Fixed(fit.beta[0]))
}

/// Recursive autoregressive model: `f_hf = ρ f_lf + γ`.
#[derive(Debug, Clone)]
pub struct Ar1Model {
    pub lf: ExactGpModel,
    pub rho: f64,
    pub discrepancy: ExactGpModel,
}

impl Ar1Model {
    pub fn predict(&self, xs: &DenseMatrix) -> Result<(DVector<f64>, DVector<f64>)> {
        let (ml, vl) = self.lf.predict(xs)?;
        let (md, vd) = self.discrepancy.predict(xs)?;
        let rho = self.rho;
        Ok((ml * rho + md, vl * (rho * rho) + vd))
    }

    pub fn max_jitter(&self) -> f64 {
        self.lf.jitter().max(self.discrepancy.jitter())
    }
}

pub fn fit_ar1_recursive(lf: &FidelityDataset, hf: &FidelityDataset, config: &ExactGpConfig) -> Result<Ar1Model> {
    if lf.dim() != hf.dim() {
        return Err(Error::DimensionMismatch(format!(
            "AR1 needs a shared input space, got {} and {} dimensions",
            lf.dim(),
            hf.dim()
        )));
    }
    let lf_gp = fit_exact_gp(&lf.x, &lf.y, config)?;
    check_rows(&hf.x, hf.y.len(), config)?;
    let (m_lf, _) = lf_gp.predict(&hf.x)?;
    let n = hf.len();
    let basis = DenseMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { m_lf[i] });
    let fit = fit_hypers(&hf.x, &hf.y, &basis, None, config)?;
    let rho = fit.beta[1];
    let resid = &hf.y - &m_lf * rho;
    let discrepancy = ExactGpModel::with_params(hf.x.clone(), resid, fit.params, fit.noise, MeanSpec::Fixed(fit.beta[0]))?;
    Ok(Ar1Model {
        lf: lf_gp,
        rho,
        discrepancy,
    })
}

/// Bias correction: `f_hf(x) = f_lf(g0(x)) + γ(x)`.
#[derive(Debug, Clone)]
pub struct BcModel {
    pub lf: ExactGpModel,
    pub discrepancy: ExactGpModel,
    pub mapping: NominalMapping,
}

impl BcModel {
    pub fn predict(&self, xs: &DenseMatrix) -> Result<(DVector<f64>, DVector<f64>)> {
        let z = self.mapping.apply_rows(xs)?;
        let (ml, vl) = self.lf.predict(&z)?;
        let (md, vd) = self.discrepancy.predict(xs)?;
        Ok((ml + md, vl + vd))
    }

    pub fn max_jitter(&self) -> f64 {
        self.lf.jitter().max(self.discrepancy.jitter())
    }
}

/// Fits the LF GP and the discrepancy GP on `y_hf − m_lf(g0(X_hf))`.
pub fn build_bc(lf: &FidelityDataset, hf: &FidelityDataset, g0: &NominalMapping, config: &ExactGpConfig) -> Result<BcModel> {
    let lf_gp = fit_exact_gp(&lf.x, &lf.y, config)?;
    build_bc_with_lf(lf_gp, hf, g0, config)
}

/// As [`build_bc`] with an already fitted LF GP.
pub fn build_bc_with_lf(lf_gp: ExactGpModel, hf: &FidelityDataset, g0: &NominalMapping, config: &ExactGpConfig) -> Result<BcModel> {
    if g0.source_dim() != hf.dim() || g0.target_dim() != lf_gp.dim() {
        return Err(Error::DimensionMismatch(format!(
            "nominal map {}->{} between spaces {} and {}",
            g0.source_dim(),
            g0.target_dim(),
            hf.dim(),
            lf_gp.dim()
        )));
    }
    let z = g0.apply_rows(&hf.x)?;
    let (m_lf, _) = lf_gp.predict(&z)?;
    let resid = &hf.y - m_lf;
    let discrepancy = fit_exact_gp(&hf.x, &resid, config)?;
    Ok(BcModel {
        lf: lf_gp,
        discrepancy,
        mapping: g0.clone(),
    })
}

/// Linear input map fitted by output matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ImcResult {
    /// `d_hf x d_lf`.
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub objective: f64,
    pub nominal_objective: f64,
    pub lambda: f64,
}

impl ImcResult {
    pub fn mapping(&self) -> NominalMapping {
        NominalMapping::Linear {
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImcConfig {
    pub lambda: f64,
    pub starts: usize,
    pub max_iters: u64,
    pub seed: u64,
}

impl Default for ImcConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            starts: 20,
            max_iters: 2000,
            seed: 0,
        }
    }
}

struct ImcProblem<'a> {
    x: &'a DenseMatrix,
    y: &'a DVector<f64>,
    lf: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    lf_bounds: &'a [(f64, f64)],
    beta0: Vec<f64>,
    lambda: f64,
}

impl ImcProblem<'_> {
    fn objective(&self, beta: &[f64]) -> f64 {
        let (dh, dl) = (self.x.ncols(), self.lf_bounds.len());
        let mut sse = 0.0;
        let mut z = vec![0.0; dl];
        for i in 0..self.x.nrows() {
            for (j, zj) in z.iter_mut().enumerate() {
                let mut v = beta[dh * dl + j];
                for k in 0..dh {
                    v += self.x[(i, k)] * beta[k * dl + j];
                }
                let (lo, hi) = self.lf_bounds[j];
                *zj = v.clamp(lo, hi);
            }
            let r = self.y[i] - (self.lf)(&z);
            sse += r * r;
        }
        let reg: f64 = beta.iter().zip(&self.beta0).map(|(a, b)| (a - b) * (a - b)).sum();
        let f = sse + self.lambda * reg;
        if f.is_finite() {
            f
        } else {
            FAILED_COST
        }
    }
}

impl CostFunction for &ImcProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, beta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.objective(beta))
    }
}

/// Minimizes `Σ (y_i − f_lf(clamp(x_i A + b)))² + λ ‖β − β0‖²` over the
/// linear map `β = (A, b)` with multi-start Nelder-Mead.
pub fn imc_calibrate(
    hf: &FidelityDataset,
    lf: &(dyn Fn(&[f64]) -> f64 + Sync),
    lf_bounds: &[(f64, f64)],
    a0: &DenseMatrix,
    b0: &[f64],
    config: &ImcConfig,
) -> Result<ImcResult> {
    let (dh, dl) = (hf.dim(), lf_bounds.len());
    if a0.nrows() != dh || a0.ncols() != dl || b0.len() != dl {
        return Err(Error::DimensionMismatch(format!(
            "nominal linear map must be {dh}x{dl} with offset {dl}"
        )));
    }
    if !(config.lambda >= 0.0) {
        return Err(Error::DegenerateData("regularization weight must be non-negative".into()));
    }
    let mut beta0: Vec<f64> = (0..dh).flat_map(|k| (0..dl).map(move |j| (k, j))).map(|(k, j)| a0[(k, j)]).collect();
    beta0.extend_from_slice(b0);
    let problem = ImcProblem {
        x: &hf.x,
        y: &hf.y,
        lf,
        lf_bounds,
        beta0: beta0.clone(),
        lambda: config.lambda,
    };
    let nominal_objective = problem.objective(&beta0);
    let np = beta0.len();
    let a_scale = a0.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut rng = RngStream::new(config.seed);
    let mut best = (nominal_objective, beta0.clone());
    for start in 0..config.starts.max(1) {
        let init: Vec<f64> = if start == 0 {
            beta0.clone()
        } else {
            let mut v: Vec<f64> = (0..dh * dl).map(|_| rng.uniform_range(-a_scale, a_scale)).collect();
            v.extend(lf_bounds.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)));
            v
        };
        let mut simplex = vec![init.clone()];
        for i in 0..np {
            let mut p = init.clone();
            let span = if i < dh * dl {
                0.25 * a_scale
            } else {
                let (lo, hi) = lf_bounds[i - dh * dl];
                0.1 * (hi - lo)
            };
            p[i] += span;
            simplex.push(p);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .map_err(|e| Error::DegenerateData(e.to_string()))?;
        if let Ok(res) = Executor::new(&problem, solver)
            .configure(|s| s.max_iters(config.max_iters))
            .run()
        {
            if let Some(p) = res.state().get_best_param() {
                let f = problem.objective(p);
                if f < best.0 {
                    best = (f, p.clone());
                }
            }
        }
    }
    let (objective, beta) = best;
    let a = DenseMatrix::from_fn(dh, dl, |k, j| beta[k * dl + j]);
    let b = beta[dh * dl..].to_vec();
    Ok(ImcResult {
        a,
        b,
        objective,
        nominal_objective,
        lambda: config.lambda,
    })
}
