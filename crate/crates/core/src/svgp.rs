//! Sparse variational GP layers in the plain `(m, S)` parameterization.
//!
//! The layer functions come in two flavours: plain evaluations on `f64`
//! matrices and graph builders on a [`Tape`] used for gradients of the
//! ELBO.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelVars, LayerKernel};
use crate::num::{cholesky_psd, chol_solve, tri_solve, DenseMatrix, Side, Tape, Var, DEFAULT_JITTER_LADDER};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const NAT_HALVINGS: usize = 10;

/// Prior mean of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanFunction {
    Zero,
    /// The last input column, i.e. the output of the previous layer.
    PreviousOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVariationalLayer {
    /// Inducing inputs, `M x input_dim`.
    pub z: DenseMatrix,
    /// Variational means, one column per output.
    pub q_mean: DenseMatrix,
    /// Lower Cholesky factors of the variational covariances, one per output.
    pub q_chol: Vec<DenseMatrix>,
    pub kernel: LayerKernel,
    /// Gaussian likelihood noise variance.
    pub noise: f64,
    pub mean_fn: MeanFunction,
    /// White-noise kernel variance added on the diagonal.
    pub white: f64,
    /// Constant jitter added to `K_ZZ` before the ladder.
    pub jitter: f64,
}

impl SparseVariationalLayer {
    /// Layer with `S = scale · I` for every output.
    pub fn new(z: DenseMatrix, q_mean: DenseMatrix, kernel: LayerKernel, noise: f64, mean_fn: MeanFunction, s_scale: f64) -> Result<Self> {
        if z.nrows() == 0 {
            return Err(Error::DegenerateData("layer needs at least one inducing point".into()));
        }
        if q_mean.nrows() != z.nrows() {
            return Err(Error::LengthMismatch(q_mean.nrows(), z.nrows()));
        }
        if z.ncols() != kernel.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel takes {} inputs, inducing points have {}",
                kernel.input_dim(),
                z.ncols()
            )));
        }
        if mean_fn == MeanFunction::PreviousOutput && q_mean.ncols() != 1 {
            return Err(Error::DimensionMismatch("previous-output mean needs a single output".into()));
        }
        if !(s_scale > 0.0) {
            return Err(Error::NonPositiveVariance(s_scale));
        }
        let m = z.nrows();
        let q_chol = vec![DenseMatrix::identity(m, m) * s_scale.sqrt(); q_mean.ncols()];
        Ok(Self {
            z,
            q_mean,
            q_chol,
            kernel,
            noise,
            mean_fn,
            white: 0.0,
            jitter: 1e-6,
        })
    }

    pub fn num_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn num_outputs(&self) -> usize {
        self.q_mean.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn q_cov(&self, j: usize) -> DenseMatrix {
        &self.q_chol[j] * self.q_chol[j].transpose()
    }

    fn prior_mean(&self, x: &DenseMatrix) -> DenseMatrix {
        match self.mean_fn {
            MeanFunction::Zero => DenseMatrix::zeros(x.nrows(), self.num_outputs()),
            MeanFunction::PreviousOutput => x.columns(x.ncols() - 1, 1).into_owned(),
        }
    }

    fn kzz(&self) -> Result<DenseMatrix> {
        let mut k = self.kernel.cov(&self.z, &self.z)?;
        for i in 0..k.nrows() {
            k[(i, i)] += self.jitter + self.white;
        }
        Ok(k)
    }
}

/// Per-point marginal means and variances (`n x outputs`).
pub fn sparse_conditional(layer: &SparseVariationalLayer, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if x.ncols() != layer.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "layer takes {} inputs, got {}",
            layer.input_dim(),
            x.ncols()
        )));
    }
    let l = cholesky_psd(&layer.kzz()?, &DEFAULT_JITTER_LADDER)?.lower;
    let kzx = layer.kernel.cov(&layer.z, x)?;
    let a = tri_solve(&l, &kzx, Side::Forward)?;
    let b = tri_solve(&l, &a, Side::Backward)?;
    let resid = &layer.q_mean - layer.prior_mean(&layer.z);
    let mean = b.transpose() * resid + layer.prior_mean(x);
    let kdiag = layer.kernel.diag_variance() + layer.white;
    let n = x.nrows();
    let mut var = DenseMatrix::zeros(n, layer.num_outputs());
    for j in 0..layer.num_outputs() {
        let sb = layer.q_cov(j) * &b;
        for i in 0..n {
            let v = kdiag - a.column(i).norm_squared() + b.column(i).dot(&sb.column(i));
            var[(i, j)] = v.max(0.0);
        }
    }
    Ok((mean, var))
}

/// `mean + √var ⊙ ε` with `eps` laid out column-major as `n x outputs`.
pub fn sample_layer(layer: &SparseVariationalLayer, x: &DenseMatrix, eps: &[f64]) -> Result<DenseMatrix> {
    let (mean, var) = sparse_conditional(layer, x)?;
    if eps.len() != mean.len() {
        return Err(Error::LengthMismatch(eps.len(), mean.len()));
    }
    Ok(DenseMatrix::from_fn(mean.nrows(), mean.ncols(), |i, j| {
        mean[(i, j)] + var[(i, j)].sqrt() * eps[j * mean.nrows() + i]
    }))
}

/// `KL[q(u) || p(u)]` summed over outputs.
pub fn kl_gaussian(layer: &SparseVariationalLayer) -> Result<f64> {
    let l = cholesky_psd(&layer.kzz()?, &DEFAULT_JITTER_LADDER)?.lower;
    let prior = layer.prior_mean(&layer.z);
    let m = layer.num_inducing() as f64;
    let logdet_k = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut kl = 0.0;
    for j in 0..layer.num_outputs() {
        let ls = &layer.q_chol[j];
        let tr = tri_solve(&l, ls, Side::Forward)?.norm_squared();
        let diff = layer.q_mean.column(j) - prior.column(j);
        let maha = tri_solve(&l, &DenseMatrix::from_column_slice(diff.len(), 1, diff.as_slice()), Side::Forward)?.norm_squared();
        let logdet_s = 2.0 * ls.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
        kl += 0.5 * (tr + maha - m + logdet_k - logdet_s);
    }
    Ok(kl)
}

/// Natural parameters `θ1 = S⁻¹m`, `θ2 = −½S⁻¹` of one Gaussian block.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub theta1: DenseMatrix,
    pub theta2: DenseMatrix,
}

impl NaturalParams {
    pub fn from_mean_cov(m: &DenseMatrix, s: &DenseMatrix) -> Result<Self> {
        let l = cholesky_psd(s, &DEFAULT_JITTER_LADDER)?.lower;
        let prec = chol_solve(&l, &DenseMatrix::identity(s.nrows(), s.nrows()))?;
        let prec = (&prec + prec.transpose()) * 0.5;
        Ok(Self {
            theta1: &prec * m,
            theta2: prec * -0.5,
        })
    }

    /// Returns `(m, L_S)`.
    pub fn to_mean_chol(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let p = &self.theta2 * -2.0;
        let lp = cholesky_psd(&p, &[0.0])?.lower;
        let n = p.nrows();
        let s = chol_solve(&lp, &DenseMatrix::identity(n, n))?;
        let s = (&s + s.transpose()) * 0.5;
        let m = &s * &self.theta1;
        let ls = cholesky_psd(&s, &[0.0])?.lower;
        Ok((m, ls))
    }
}

/// Gradient of an objective with respect to one block's `(m, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient {
    pub mean: DenseMatrix,
    /// Symmetric.
    pub cov: DenseMatrix,
}

/// One natural-gradient step on block `j`: `θ ← θ + γ ∇_η L`. The step is
/// halved until the new covariance is positive definite; returns `false`
/// when the block was left unchanged after all halvings.
pub fn natural_step_block(layer: &mut SparseVariationalLayer, j: usize, grad: &BlockGradient, gamma: f64) -> Result<bool> {
    if grad.mean.iter().chain(grad.cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    if grad.mean.iter().chain(grad.cov.iter()).all(|v| *v == 0.0) {
        return Ok(true);
    }
    let m = layer.q_mean.columns(j, 1).into_owned();
    let nat = NaturalParams::from_mean_cov(&m, &layer.q_cov(j))?;
    let g_eta1 = &grad.mean - (&grad.cov * &m) * 2.0;
    let g_eta2 = (&grad.cov + grad.cov.transpose()) * 0.5;
    let mut step = gamma;
    for _ in 0..=NAT_HALVINGS {
        let cand = NaturalParams {
            theta1: &nat.theta1 + &g_eta1 * step,
            theta2: &nat.theta2 + &g_eta2 * step,
        };
        if let Ok((m_new, l_new)) = cand.to_mean_chol() {
            if m_new.iter().chain(l_new.iter()).all(|v| v.is_finite()) {
                layer.q_mean.set_column(j, &m_new.column(0));
                layer.q_chol[j] = l_new;
                return Ok(true);
            }
        }
        step *= 0.5;
    }
    log::warn!("natural step skipped: covariance not positive definite after {NAT_HALVINGS} halvings");
    Ok(false)
}

/// Applies [`natural_step_block`] to every output; returns the number of
/// skipped blocks.
pub fn natural_step(layer: &mut SparseVariationalLayer, grads: &[BlockGradient], gamma: f64) -> Result<usize> {
    if !(gamma > 0.0) {
        return Err(Error::DegenerateData("natural step size must be positive".into()));
    }
    if grads.len() != layer.num_outputs() {
        return Err(Error::LengthMismatch(grads.len(), layer.num_outputs()));
    }
    let mut skipped = 0;
    for (j, g) in grads.iter().enumerate() {
        if !natural_step_block(layer, j, g, gamma)? {
            skipped += 1;
        }
    }
    Ok(skipped)
}

/// Inducing-point factorization shared by conditionals and KL terms.
#[derive(Debug, Clone, Copy)]
pub struct InducingGraph {
    pub z: Var,
    pub l_zz: Var,
}

/// `K_ZZ + (jitter + white) I` factorized on the tape.
pub fn inducing_graph(t: &Tape, kv: &KernelVars, z: Var, jitter: f64, white: Option<Var>) -> InducingGraph {
    let mut kzz = t.add_diag_const(kv.cov(t, z, z), jitter);
    if let Some(w) = white {
        let m = t.shape(z).0;
        let eye = t.leaf(DenseMatrix::identity(m, m));
        kzz = t.add(kzz, t.mul_scalar(eye, w));
    }
    InducingGraph { z, l_zz: t.cholesky(kzz) }
}

/// Marginal conditional on the tape. `q_mean` is `M x p`, `q_cov` holds one
/// `M x M` covariance per output; `mean_x`/`mean_z` are the prior means at
/// the inputs and inducing inputs (`None` for zero). Returns `(mean, var)`,
/// both `n x p`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_graph(
    t: &Tape,
    kv: &KernelVars,
    ind: &InducingGraph,
    x: Var,
    q_mean: Var,
    q_cov: &[Var],
    mean_x: Option<Var>,
    mean_z: Option<Var>,
    white: Option<Var>,
) -> (Var, Var) {
    let n = t.shape(x).0;
    let kzx = kv.cov(t, ind.z, x);
    let a = t.solve_lower(ind.l_zz, kzx);
    let b = t.solve_lower_t(ind.l_zz, a);
    let resid = match mean_z {
        Some(mz) => t.sub(q_mean, mz),
        None => q_mean,
    };
    let mut mean = t.matmul(t.transpose(b), resid);
    if let Some(mx) = mean_x {
        mean = t.add(mean, mx);
    }
    let mut kdiag = kv.diag_variance(t);
    if let Some(w) = white {
        kdiag = t.add(kdiag, w);
    }
    let base = t.sub(t.broadcast(kdiag, n, 1), t.transpose(t.col_sums(t.square(a))));
    let cols: Vec<Var> = q_cov
        .iter()
        .map(|&s| {
            let sb = t.matmul(s, b);
            t.add(base, t.transpose(t.col_sums(t.mul(b, sb))))
        })
        .collect();
    let var = if cols.len() == 1 { cols[0] } else { t.hcat(&cols) };
    (mean, t.clamp_min(var, 0.0))
}

/// `KL[N(m, S) || N(mean_z, K_ZZ)]` for one output column.
pub fn kl_graph(t: &Tape, ind: &InducingGraph, q_mean_col: Var, q_cov: Var, mean_z_col: Option<Var>) -> Var {
    let m = t.shape(q_mean_col).0 as f64;
    let ls = t.cholesky(q_cov);
    let tr = t.sum(t.square(t.solve_lower(ind.l_zz, ls)));
    let diff = match mean_z_col {
        Some(mz) => t.sub(q_mean_col, mz),
        None => q_mean_col,
    };
    let maha = t.sum(t.square(t.solve_lower(ind.l_zz, diff)));
    let logdet_k = t.sum(t.log(t.diag(ind.l_zz)));
    let logdet_s = t.sum(t.log(t.diag(ls)));
    let core = t.add(t.add(tr, maha), t.scale(t.sub(logdet_k, logdet_s), 2.0));
    t.scale(t.add_scalar_const(core, -m), 0.5)
}

/// `Σ_i E_{N(f; μ_i, v_i)} log N(y_i | f, σ²)` with `σ² = exp(log_noise)`.
pub fn expected_loglik_graph(t: &Tape, y: &DenseMatrix, mean: Var, var: Var, log_noise: Var) -> Var {
    let n = y.len() as f64;
    let yl = t.leaf(y.clone());
    let sq = t.sum(t.square(t.sub(yl, mean)));
    let total = t.add(sq, t.sum(var));
    let inv = t.exp(t.neg(log_noise));
    let quad = t.scale(t.mul(total, inv), -0.5);
    let norm = t.add_scalar_const(t.scale(log_noise, -0.5 * n), -0.5 * n * LOG_2PI);
    t.add(quad, norm)
}

/// Collapsed-style check objective for a single layer with Gaussian
/// likelihood: returns the ELBO and its gradient with respect to every
/// `(m, S)` block. Hyperparameters are held fixed.
pub fn gaussian_elbo(layer: &SparseVariationalLayer, x: &DenseMatrix, y: &DenseMatrix) -> Result<(f64, Vec<BlockGradient>)> {
    if y.nrows() != x.nrows() || y.ncols() != layer.num_outputs() {
        return Err(Error::DimensionMismatch("targets must be n x outputs".into()));
    }
    let t = Tape::new();
    let kv = KernelVars::leaves(&t, &layer.kernel);
    let z = t.leaf(layer.z.clone());
    let xv = t.leaf(x.clone());
    let white = (layer.white > 0.0).then(|| t.scalar(layer.white));
    let ind = inducing_graph(&t, &kv, z, layer.jitter, white);
    let qm = t.leaf(layer.q_mean.clone());
    let qs: Vec<Var> = (0..layer.num_outputs()).map(|j| t.leaf(layer.q_cov(j))).collect();
    let (mean_x, mean_z) = match layer.mean_fn {
        MeanFunction::Zero => (None, None),
        MeanFunction::PreviousOutput => (Some(t.column(xv, x.ncols() - 1)), Some(t.column(z, layer.z.ncols() - 1))),
    };
    let (mean, var) = conditional_graph(&t, &kv, &ind, xv, qm, &qs, mean_x, mean_z, white);
    let log_noise = t.scalar(layer.noise.ln());
    let mut elbo = t.scalar(0.0);
    for j in 0..layer.num_outputs() {
        let yj = y.columns(j, 1).into_owned();
        let (mj, vj) = if layer.num_outputs() == 1 { (mean, var) } else { (t.column(mean, j), t.column(var, j)) };
        elbo = t.add(elbo, expected_loglik_graph(&t, &yj, mj, vj, log_noise));
        let qmj = if layer.num_outputs() == 1 { qm } else { t.column(qm, j) };
        elbo = t.sub(elbo, kl_graph(&t, &ind, qmj, qs[j], mean_z));
    }
    t.check()?;
    let value = t.scalar_value(elbo);
    let g = t.gradients(elbo);
    let gm = g.get(qm);
    let grads = (0..layer.num_outputs())
        .map(|j| {
            let gs = g.get(qs[j]);
            BlockGradient {
                mean: gm.columns(j, 1).into_owned(),
                cov: (&gs + gs.transpose()) * 0.5,
            }
        })
        .collect();
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_gp::{ExactGpModel, MeanSpec};
    use crate::kernels::SeArdParams;
    use crate::num::RngStream;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn rand_mat(rng: &mut RngStream, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.uniform())
    }

    fn se_layer(z: DenseMatrix, p: SeArdParams) -> SparseVariationalLayer {
        let m = z.nrows();
        let mut l = SparseVariationalLayer::new(z, DenseMatrix::zeros(m, 1), LayerKernel::SeArd(p), 0.1, MeanFunction::Zero, 1.0).unwrap();
        l.jitter = 0.0;
        l
    }

    /// `K_xZ K⁻¹ m` and `k_xx − k_xZ K⁻¹ (K − S) K⁻¹ k_Zx` with explicit inverses.
    fn dense_oracle(layer: &SparseVariationalLayer, x: &DenseMatrix) -> (DVector<f64>, DVector<f64>) {
        let kzz = layer.kernel.cov(&layer.z, &layer.z).unwrap();
        let kinv = kzz.clone().try_inverse().unwrap();
        let kxz = layer.kernel.cov(x, &layer.z).unwrap();
        let s = layer.q_cov(0);
        let mean = &kxz * &kinv * layer.q_mean.column(0);
        let cov = layer.kernel.cov(x, x).unwrap() - &kxz * &kinv * (&kzz - s) * &kinv * kxz.transpose();
        (mean, cov.diagonal())
    }

    #[test]
    fn conditional_matches_dense_oracle() {
        let mut rng = RngStream::new(12);
        for _ in 0..20 {
            let z = rand_mat(&mut rng, 5, 2);
            let mut layer = se_layer(z, SeArdParams::new(vec![0.6, 0.9], 1.3).unwrap());
            layer.q_mean = DenseMatrix::from_fn(5, 1, |_, _| rng.normal());
            let g = DenseMatrix::from_fn(5, 5, |_, _| rng.uniform_range(-0.3, 0.3));
            layer.q_chol[0] = cholesky_psd(&(&g * g.transpose() + DenseMatrix::identity(5, 5) * 0.05), &[0.0]).unwrap().lower;
            let x = rand_mat(&mut rng, 7, 2);
            let (m, v) = sparse_conditional(&layer, &x).unwrap();
            let (mo, vo) = dense_oracle(&layer, &x);
            for i in 0..7 {
                assert_abs_diff_eq!(m[(i, 0)], mo[i], epsilon = 1e-8);
                assert_abs_diff_eq!(v[(i, 0)], vo[i].max(0.0), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn prior_recovery_and_delta() {
        let z = DenseMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let p = SeArdParams::new(vec![0.4], 2.0).unwrap();
        let mut layer = se_layer(z.clone(), p.clone());
        let kzz = layer.kernel.cov(&z, &z).unwrap();
        layer.q_chol[0] = cholesky_psd(&kzz, &[0.0]).unwrap().lower;
        let x = DenseMatrix::from_row_slice(4, 1, &[0.1, 0.3, 0.77, 2.0]);
        let (m, v) = sparse_conditional(&layer, &x).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m[(i, 0)], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v[(i, 0)], 2.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(kl_gaussian(&layer).unwrap(), 0.0, epsilon = 1e-10);

        layer.q_mean = DenseMatrix::from_row_slice(3, 1, &[0.3, -1.0, 0.8]);
        layer.q_chol[0] = DenseMatrix::identity(3, 3) * 1e-6;
        let (m, v) = sparse_conditional(&layer, &z).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(m[(i, 0)], layer.q_mean[(i, 0)], epsilon = 1e-8);
            assert!(v[(i, 0)] <= 1e-8);
        }
    }

    #[test]
    fn kl_closed_form() {
        let z = DenseMatrix::from_row_slice(1, 1, &[0.0]);
        let mut layer = se_layer(z, SeArdParams::unit(1));
        layer.q_mean[(0, 0)] = 1.0;
        assert_abs_diff_eq!(kl_gaussian(&layer).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_nonnegative_random() {
        let mut rng = RngStream::new(99);
        for _ in 0..100 {
            let m = 1 + rng.below(6);
            let z = rand_mat(&mut rng, m, 2);
            let mut layer = se_layer(z, SeArdParams::new(vec![rng.uniform_range(0.2, 2.0), 0.7], rng.uniform_range(0.2, 3.0)).unwrap());
            layer.jitter = 1e-8;
            layer.q_mean = DenseMatrix::from_fn(m, 1, |_, _| rng.normal());
            let g = DenseMatrix::from_fn(m, m, |_, _| rng.normal());
            layer.q_chol[0] = cholesky_psd(&(&g * g.transpose() + DenseMatrix::identity(m, m) * 1e-3), &[0.0]).unwrap().lower;
            assert!(kl_gaussian(&layer).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn sampling() {
        let z = DenseMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut layer = se_layer(z, SeArdParams::unit(1));
        layer.q_mean = DenseMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let x = DenseMatrix::from_row_slice(1, 1, &[0.4]);
        let (m, v) = sparse_conditional(&layer, &x).unwrap();
        assert_eq!(sample_layer(&layer, &x, &[0.0]).unwrap()[(0, 0)], m[(0, 0)]);
        let a = sample_layer(&layer, &x, &[0.7]).unwrap();
        assert_eq!(a, sample_layer(&layer, &x, &[0.7]).unwrap());
        assert!(matches!(sample_layer(&layer, &x, &[0.1, 0.2]), Err(Error::LengthMismatch(..))));

        let mut rng = RngStream::new(1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_layer(&layer, &x, &[rng.normal()]).unwrap()[(0, 0)]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = v[(0, 0)] * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - v[(0, 0)]).abs() <= 3.0 * se);
    }

    #[test]
    fn natural_round_trip() {
        let mut rng = RngStream::new(5);
        for _ in 0..20 {
            let g = DenseMatrix::from_fn(4, 4, |_, _| rng.normal());
            let s = &g * g.transpose() + DenseMatrix::identity(4, 4) * 0.5;
            let m = DenseMatrix::from_fn(4, 1, |_, _| rng.normal());
            let (m2, l2) = NaturalParams::from_mean_cov(&m, &s).unwrap().to_mean_chol().unwrap();
            assert!((m2 - &m).amax() < 1e-8);
            assert!((&l2 * l2.transpose() - &s).amax() < 1e-8);
        }
    }

    #[test]
    fn conjugate_step_hits_exact_posterior() {
        let mut rng = RngStream::new(3);
        let x = rand_mat(&mut rng, 6, 1);
        let y = DenseMatrix::from_fn(6, 1, |i, _| (5.0 * x[(i, 0)]).sin());
        let p = SeArdParams::new(vec![0.3], 1.2).unwrap();
        let mut layer = se_layer(x.clone(), p.clone());
        layer.noise = 0.05;
        layer.q_mean = DenseMatrix::from_fn(6, 1, |_, _| rng.normal());
        let (_, g) = gaussian_elbo(&layer, &x, &y).unwrap();
        natural_step(&mut layer, &g, 1.0).unwrap();

        let k = layer.kernel.cov(&x, &x).unwrap();
        let kn = &k + DenseMatrix::identity(6, 6) * 0.05;
        let post_mean = &k * kn.clone().try_inverse().unwrap() * &y;
        let post_cov = &k - &k * kn.try_inverse().unwrap() * &k;
        assert!((&layer.q_mean - post_mean).amax() < 1e-6);
        assert!((layer.q_cov(0) - post_cov).amax() < 1e-6);

        let (elbo, _) = gaussian_elbo(&layer, &x, &y).unwrap();
        let exact = ExactGpModel::with_params(x.clone(), DVector::from_column_slice(y.as_slice()), p, 0.05, MeanSpec::Fixed(0.0)).unwrap();
        assert_abs_diff_eq!(elbo, exact.log_marginal_likelihood(), epsilon = 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_layer() {
        let z = DenseMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut layer = se_layer(z, SeArdParams::unit(1));
        let before = layer.clone();
        let g = BlockGradient {
            mean: DenseMatrix::zeros(2, 1),
            cov: DenseMatrix::zeros(2, 2),
        };
        natural_step(&mut layer, &[g], 0.01).unwrap();
        assert_eq!(layer, before);
    }

    #[test]
    fn pd_breaking_step_is_halved() {
        let z = DenseMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut layer = se_layer(z, SeArdParams::unit(1));
        let g = BlockGradient {
            mean: DenseMatrix::zeros(2, 1),
            cov: DenseMatrix::identity(2, 2) * 0.8,
        };
        // θ2 = −½I; a full step gives +0.3 I, which is not negative definite.
        assert!(natural_step_block(&mut layer, 0, &g, 1.0).unwrap());
        let s = layer.q_cov(0);
        assert!(cholesky_psd(&s, &[0.0]).is_ok());
        assert!(s[(0, 0)] > 1.0);
    }
}
