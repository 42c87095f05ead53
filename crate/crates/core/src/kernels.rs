//! Covariance functions: squared-exponential ARD, white noise, and the
//! multi-fidelity composite `k_ρ(x,x')·k_f(f,f') + k_γ(x,x')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::tape::{se_forward, Tape, Var};
use crate::num::DenseMatrix;

pub const LENGTHSCALE_FLOOR: f64 = 1e-4;
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Squared-exponential ARD parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeArdParams {
    pub lengthscales: Vec<f64>,
    pub variance: f64,
}

impl SeArdParams {
    /// Unit lengthscales and unit variance.
    pub fn unit(dim: usize) -> Self {
        Self {
            lengthscales: vec![1.0; dim],
            variance: 1.0,
        }
    }

    pub fn new(lengthscales: Vec<f64>, variance: f64) -> Result<Self> {
        let p = Self {
            lengthscales,
            variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::DegenerateData("lengthscales must be positive".into()));
        }
        if !(self.variance >= 0.0) || !self.variance.is_finite() {
            return Err(Error::NegativeVariance(self.variance));
        }
        Ok(())
    }

    /// Clamps lengthscales and variance at their floors.
    pub fn apply_floors(&mut self) {
        for l in &mut self.lengthscales {
            *l = l.max(LENGTHSCALE_FLOOR);
        }
        self.variance = self.variance.max(VARIANCE_FLOOR);
    }

    /// Log-space view `[log ℓ_1, ..., log ℓ_d, log v]`.
    pub fn to_unconstrained(&self) -> UnconstrainedParamView {
        let mut p = self.lengthscales.clone();
        p.push(self.variance);
        UnconstrainedParamView::from_constrained(&p)
    }

    pub fn from_unconstrained(view: &UnconstrainedParamView) -> Result<Self> {
        let c = view.to_constrained();
        let (v, ls) = c.split_last().ok_or_else(|| Error::DimensionMismatch("empty view".into()))?;
        Self::new(ls.to_vec(), *v)
    }
}

/// Parameters of the composite multi-fidelity covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeMfParams {
    /// `k_ρ` over the original inputs.
    pub scale: SeArdParams,
    /// `k_f` over the previous-layer output (one dimension).
    pub previous: SeArdParams,
    /// `k_γ` over the original inputs.
    pub bias: SeArdParams,
}

impl CompositeMfParams {
    pub fn unit(dim: usize) -> Self {
        Self {
            scale: SeArdParams::unit(dim),
            previous: SeArdParams::unit(1),
            bias: SeArdParams::unit(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn apply_floors(&mut self) {
        self.scale.apply_floors();
        self.previous.apply_floors();
        self.bias.apply_floors();
    }

    /// Prior variance at any point.
    pub fn diag_variance(&self) -> f64 {
        self.scale.variance * self.previous.variance + self.bias.variance
    }
}

/// Positive parameters stored through the log bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParamView {
    pub raw: Vec<f64>,
    pub bijection: Bijection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bijection {
    Log,
}

impl UnconstrainedParamView {
    pub fn from_constrained(values: &[f64]) -> Self {
        Self {
            raw: values.iter().map(|v| v.ln()).collect(),
            bijection: Bijection::Log,
        }
    }

    pub fn to_constrained(&self) -> Vec<f64> {
        match self.bijection {
            Bijection::Log => self.raw.iter().map(|r| r.exp()).collect(),
        }
    }
}

/// `v · exp(−½ Σ_d ((a_id − b_jd)/ℓ_d)²)` for every pair of rows.
pub fn se_ard_cov(a: &DenseMatrix, b: &DenseMatrix, params: &SeArdParams) -> Result<DenseMatrix> {
    if a.ncols() != params.dim() || b.ncols() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "SE-ARD kernel of dimension {} applied to {} and {} columns",
            params.dim(),
            a.ncols(),
            b.ncols()
        )));
    }
    params.validate()?;
    let log_ls = DenseMatrix::from_fn(1, params.dim(), |_, j| params.lengthscales[j].ln());
    if params.variance == 0.0 {
        return Ok(DenseMatrix::zeros(a.nrows(), b.nrows()));
    }
    Ok(se_forward(a, b, &log_ls, params.variance.ln()))
}

/// `k_ρ(x_i,x_j)·k_f(f_i,f_j) + k_γ(x_i,x_j)`.
pub fn composite_mf_cov(
    xa: &DenseMatrix,
    xb: &DenseMatrix,
    fa: &[f64],
    fb: &[f64],
    params: &CompositeMfParams,
) -> Result<DenseMatrix> {
    if xa.nrows() != fa.len() || xb.nrows() != fb.len() {
        return Err(Error::DimensionMismatch(
            "previous-output columns must match input rows".into(),
        ));
    }
    let fa = DenseMatrix::from_column_slice(fa.len(), 1, fa);
    let fb = DenseMatrix::from_column_slice(fb.len(), 1, fb);
    let rho = se_ard_cov(xa, xb, &params.scale)?;
    let prev = se_ard_cov(&fa, &fb, &params.previous)?;
    let bias = se_ard_cov(xa, xb, &params.bias)?;
    Ok(rho.component_mul(&prev) + bias)
}

/// `variance · I_n`.
pub fn white_cov(n: usize, variance: f64) -> Result<DenseMatrix> {
    if !(variance >= 0.0) {
        return Err(Error::NegativeVariance(variance));
    }
    Ok(DenseMatrix::identity(n, n) * variance)
}

/// Cross-covariance of the white kernel between two distinct point sets.
pub fn white_cross_cov(na: usize, nb: usize) -> DenseMatrix {
    DenseMatrix::zeros(na, nb)
}

/// Kernel of a sparse layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKernel {
    SeArd(SeArdParams),
    /// Inputs carry the original coordinates followed by one previous-output column.
    Composite(CompositeMfParams),
}

impl LayerKernel {
    /// Number of input columns the kernel consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            LayerKernel::SeArd(p) => p.dim(),
            LayerKernel::Composite(p) => p.dim() + 1,
        }
    }

    pub fn diag_variance(&self) -> f64 {
        match self {
            LayerKernel::SeArd(p) => p.variance,
            LayerKernel::Composite(p) => p.diag_variance(),
        }
    }

    pub fn apply_floors(&mut self) {
        match self {
            LayerKernel::SeArd(p) => p.apply_floors(),
            LayerKernel::Composite(p) => p.apply_floors(),
        }
    }

    /// Log-parameters as `[log ℓ (1 x d), log v (1x1)]` per SE block, in
    /// the order scale, previous, bias for the composite kernel.
    pub fn log_blocks(&self) -> Vec<DenseMatrix> {
        let se = |p: &SeArdParams| {
            vec![
                DenseMatrix::from_fn(1, p.dim(), |_, j| p.lengthscales[j].ln()),
                DenseMatrix::from_element(1, 1, p.variance.ln()),
            ]
        };
        match self {
            LayerKernel::SeArd(p) => se(p),
            LayerKernel::Composite(c) => [se(&c.scale), se(&c.previous), se(&c.bias)].concat(),
        }
    }

    /// Inverse of [`LayerKernel::log_blocks`]; floors are applied.
    pub fn set_log_blocks(&mut self, blocks: &[DenseMatrix]) {
        let set = |p: &mut SeArdParams, ls: &DenseMatrix, v: &DenseMatrix| {
            for (l, b) in p.lengthscales.iter_mut().zip(ls.iter()) {
                *l = b.exp();
            }
            p.variance = v[(0, 0)].exp();
            p.apply_floors();
        };
        match self {
            LayerKernel::SeArd(p) => set(p, &blocks[0], &blocks[1]),
            LayerKernel::Composite(c) => {
                set(&mut c.scale, &blocks[0], &blocks[1]);
                set(&mut c.previous, &blocks[2], &blocks[3]);
                set(&mut c.bias, &blocks[4], &blocks[5]);
            }
        }
    }

    pub fn cov(&self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            LayerKernel::SeArd(p) => se_ard_cov(a, b, p),
            LayerKernel::Composite(p) => {
                let d = p.dim();
                if a.ncols() != d + 1 || b.ncols() != d + 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "composite kernel expects {} columns",
                        d + 1
                    )));
                }
                let fa: Vec<f64> = a.column(d).iter().copied().collect();
                let fb: Vec<f64> = b.column(d).iter().copied().collect();
                composite_mf_cov(
                    &a.columns(0, d).into_owned(),
                    &b.columns(0, d).into_owned(),
                    &fa,
                    &fb,
                    p,
                )
            }
        }
    }
}

/// Log-parameter leaves of one SE-ARD block on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SeVars {
    pub log_ls: Var,
    pub log_var: Var,
}

impl SeVars {
    pub fn leaves(t: &Tape, p: &SeArdParams) -> Self {
        let log_ls = t.leaf(DenseMatrix::from_fn(1, p.dim(), |_, j| p.lengthscales[j].ln()));
        let log_var = t.scalar(p.variance.ln());
        Self { log_ls, log_var }
    }

    pub fn cov(&self, t: &Tape, a: Var, b: Var) -> Var {
        t.se_cov(a, b, self.log_ls, self.log_var)
    }

    pub fn variance(&self, t: &Tape) -> Var {
        t.exp(self.log_var)
    }
}

/// Kernel parameters as tape leaves.
#[derive(Debug, Clone, Copy)]
pub enum KernelVars {
    SeArd(SeVars),
    Composite { scale: SeVars, previous: SeVars, bias: SeVars, dim: usize },
}

impl KernelVars {
    pub fn leaves(t: &Tape, k: &LayerKernel) -> Self {
        match k {
            LayerKernel::SeArd(p) => KernelVars::SeArd(SeVars::leaves(t, p)),
            LayerKernel::Composite(p) => KernelVars::Composite {
                scale: SeVars::leaves(t, &p.scale),
                previous: SeVars::leaves(t, &p.previous),
                bias: SeVars::leaves(t, &p.bias),
                dim: p.dim(),
            },
        }
    }

    /// Wraps leaves laid out as in [`LayerKernel::log_blocks`].
    pub fn from_vars(kernel: &LayerKernel, vars: &[Var]) -> Self {
        match kernel {
            LayerKernel::SeArd(_) => KernelVars::SeArd(SeVars {
                log_ls: vars[0],
                log_var: vars[1],
            }),
            LayerKernel::Composite(c) => KernelVars::Composite {
                scale: SeVars {
                    log_ls: vars[0],
                    log_var: vars[1],
                },
                previous: SeVars {
                    log_ls: vars[2],
                    log_var: vars[3],
                },
                bias: SeVars {
                    log_ls: vars[4],
                    log_var: vars[5],
                },
                dim: c.dim(),
            },
        }
    }

    /// Leaves in the order of [`LayerKernel::log_blocks`].
    pub fn vars(&self) -> Vec<Var> {
        match self {
            KernelVars::SeArd(s) => vec![s.log_ls, s.log_var],
            KernelVars::Composite {
                scale,
                previous,
                bias,
                ..
            } => vec![
                scale.log_ls,
                scale.log_var,
                previous.log_ls,
                previous.log_var,
                bias.log_ls,
                bias.log_var,
            ],
        }
    }

    pub fn cov(&self, t: &Tape, a: Var, b: Var) -> Var {
        match *self {
            KernelVars::SeArd(s) => s.cov(t, a, b),
            KernelVars::Composite {
                scale,
                previous,
                bias,
                dim,
            } => {
                let xa = t.columns(a, 0, dim);
                let fa = t.column(a, dim);
                let (xb, fb) = if a == b {
                    (xa, fa)
                } else {
                    (t.columns(b, 0, dim), t.column(b, dim))
                };
                let kr = scale.cov(t, xa, xb);
                let kf = previous.cov(t, fa, fb);
                let kg = bias.cov(t, xa, xb);
                t.add(t.mul(kr, kf), kg)
            }
        }
    }

    /// Prior variance as a `1x1` node.
    pub fn diag_variance(&self, t: &Tape) -> Var {
        match *self {
            KernelVars::SeArd(s) => s.variance(t),
            KernelVars::Composite {
                scale,
                previous,
                bias,
                ..
            } => {
                let vr = scale.variance(t);
                let vf = previous.variance(t);
                t.add(t.mul(vr, vf), bias.variance(t))
            }
        }
    }
}
