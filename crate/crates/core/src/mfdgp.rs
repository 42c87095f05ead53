//! Multi-fidelity deep GP with embedded input-mapping layers.
//!
//! Fidelity `t` (1-based, lowest first) owns a sparse GP layer. Layer 1
//! takes the lowest-fidelity inputs; layer `l ≥ 2` takes its own inputs
//! augmented with the output of layer `l − 1`. Between consecutive input
//! spaces sits a mapping stage that sends fidelity-`(t+1)` inputs into the
//! fidelity-`t` space, either a learned multi-output sparse GP conditioned on
//! nominal mapped values or a frozen linear map (which gives the plain
//! MF-DGP when the spaces coincide).
//!
//! Everything inside the model lives in scaled coordinates; [`IoScaling`]
//! converts at the boundary.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{scale_io, FidelityDataset, IoScaling};
use crate::error::{Error, Result};
use crate::kernels::{CompositeMfParams, KernelVars, LayerKernel, SeArdParams};
use crate::num::{AdamState, DenseMatrix, RngStream, Tape, Var};
use crate::svgp::{
    conditional_graph, expected_loglik_graph, inducing_graph, kl_graph, natural_step, sparse_conditional, BlockGradient,
    InducingGraph, MeanFunction, SparseVariationalLayer,
};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const SAMPLE_VAR_FLOOR: f64 = 1e-12;
const WHITE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub adam_step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub nat_step: f64,
    /// Natural step for the mapping layers. Their likelihood signal arrives
    /// only through the next fidelity, and at the full step their covariance
    /// inflates until the HF layer reads its inputs as noise.
    pub map_nat_step: f64,
    /// Reparameterized samples per expectation during training.
    pub train_samples: usize,
    /// Propagated samples `k` of the prediction mixture.
    pub predict_samples: usize,
    pub seed: u64,
    pub trace_every: usize,
    /// Constant jitter added to every `K_ZZ`.
    pub inducing_jitter: f64,
    pub noise_init: f64,
    pub map_noise_init: f64,
    pub noise_floor: f64,
    /// `S` starts at this multiple of the prior variance times the identity.
    pub s_init_scale: f64,
    pub white_kernel: bool,
    pub white_init: f64,
    /// Leading iterations that update only the Euclidean parameters other
    /// than the likelihood noises. With `q(u)` held at the data and the
    /// noises pinned, the kernels adapt before the variational updates can
    /// explain the data away as noise.
    pub warmup: usize,
    /// Let Adam move the free inducing inputs `Z` and `W`.
    pub learn_inducing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 28_000,
            adam_step: 0.003,
            beta1: 0.9,
            beta2: 0.99,
            nat_step: 0.01,
            map_nat_step: 0.001,
            train_samples: 1,
            predict_samples: 100,
            seed: 0,
            trace_every: 100,
            inducing_jitter: 1e-6,
            noise_init: 1e-2,
            map_noise_init: 1e-2,
            noise_floor: 1e-6,
            s_init_scale: 1e-5,
            white_kernel: false,
            white_init: 1e-2,
            warmup: 3_000,
            learn_inducing: false,
        }
    }
}

impl TrainConfig {
    /// Shortened schedule for quick runs.
    pub fn fast() -> Self {
        Self {
            iterations: 8_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("adam_step", self.adam_step),
            ("nat_step", self.nat_step),
            ("map_nat_step", self.map_nat_step),
            ("noise_init", self.noise_init),
            ("map_noise_init", self.map_noise_init),
            ("noise_floor", self.noise_floor),
            ("s_init_scale", self.s_init_scale),
            ("white_init", self.white_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::DegenerateData(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::DegenerateData("Adam betas must lie in [0, 1)".into()));
        }
        if self.iterations == 0 || self.train_samples == 0 || self.predict_samples == 0 || self.trace_every == 0 {
            return Err(Error::DegenerateData("iteration and sample counts must be at least 1".into()));
        }
        if !(self.inducing_jitter >= 0.0) {
            return Err(Error::NegativeVariance(self.inducing_jitter));
        }
        Ok(())
    }
}

/// Learned mapping between two input spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingLayer {
    /// Multi-output layer; its `noise` is the nominal-value likelihood
    /// variance and its `white` the optional white-kernel variance.
    pub layer: SparseVariationalLayer,
    pub learn_white: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MappingStage {
    Learned(MappingLayer),
    /// `z = x A + b` in scaled coordinates.
    Frozen { a: DenseMatrix, b: Vec<f64> },
}

/// How the inputs of fidelity `t + 1` reach the space of fidelity `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum NominalInput {
    /// Nominal mapped values of every fidelity-`(t+1)` training row (raw
    /// coordinates of fidelity `t`); a mapping layer is learned from them.
    Values(DenseMatrix),
    /// Fixed raw linear map `z = x A + b`.
    Frozen { a: DenseMatrix, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfDgpModel {
    pub fidelities: Vec<SparseVariationalLayer>,
    pub mappings: Vec<MappingStage>,
    /// Scaled training inputs per fidelity.
    pub x: Vec<DenseMatrix>,
    /// Scaled training outputs per fidelity (`n x 1`).
    pub y: Vec<DenseMatrix>,
    /// Scaled nominal mapped values feeding learned mapping stages.
    pub nominal: Vec<Option<DenseMatrix>>,
    pub scaling: IoScaling,
    pub config: TrainConfig,
    /// ELBO estimate of every completed iteration.
    pub elbo_history: Vec<f64>,
    pub adam: Option<AdamState>,
    pub skipped_nat_steps: usize,
    pub max_jitter: f64,
}

/// Outcome of a [`MfDgpModel::train`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub stopped_on_budget: bool,
    pub skipped_nat_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub samples: usize,
    pub seed: u64,
    /// Propagate means only (all reparameterization draws set to zero).
    pub zero_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    /// Latent mixture variance.
    pub var: DVector<f64>,
    /// Per-sample conditional means and variances (`n x k`), raw scale.
    pub sample_means: DenseMatrix,
    pub sample_vars: DenseMatrix,
    pub untrained: bool,
}

/// Value and gradients of one ELBO estimate.
#[derive(Debug, Clone)]
pub struct ElboEval {
    pub value: f64,
    /// Gradient with respect to [`MfDgpModel::euclidean_params`].
    pub euclidean: Vec<f64>,
    /// Per variational layer (learned mappings first, then fidelities),
    /// one gradient per output block.
    pub variational: Vec<Vec<BlockGradient>>,
    pub max_jitter: f64,
}

/// Converts a raw linear map between two boxes into scaled coordinates.
fn scale_linear(a: &DenseMatrix, b: &[f64], src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<(DenseMatrix, Vec<f64>)> {
    if a.nrows() != src.len() || a.ncols() != dst.len() || b.len() != dst.len() {
        return Err(Error::DimensionMismatch(format!(
            "linear map {}x{} between spaces of dimension {} and {}",
            a.nrows(),
            a.ncols(),
            src.len(),
            dst.len()
        )));
    }
    let ws: Vec<f64> = src.iter().map(|(lo, hi)| hi - lo).collect();
    let wt: Vec<f64> = dst.iter().map(|(lo, hi)| hi - lo).collect();
    let a_s = DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| ws[i] * a[(i, j)] / wt[j]);
    let b_s = (0..dst.len())
        .map(|j| {
            let shift: f64 = (0..src.len()).map(|i| src[i].0 * a[(i, j)]).sum();
            (shift + b[j] - dst[j].0) / wt[j]
        })
        .collect();
    Ok((a_s, b_s))
}

fn tile_row(b: &[f64], n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, b.len(), |_, j| b[j])
}

fn col_matrix(v: &DVector<f64>) -> DenseMatrix {
    DenseMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Assembles the model: fidelity layer `t` starts with `Z = X^t` and
/// `q`-mean `y^t`; mapping layer `t` with `W = X^{t+1}` and `q`-mean at the
/// nominal mapped values.
pub fn build_model(datasets: &[FidelityDataset], nominal: &[NominalInput], config: &TrainConfig) -> Result<MfDgpModel> {
    config.validate()?;
    let s = datasets.len();
    if s == 0 {
        return Err(Error::DegenerateData("no fidelity datasets".into()));
    }
    if nominal.len() + 1 != s {
        return Err(Error::MissingNominalValues(format!(
            "{s} fidelities need {} mapping inputs, got {}",
            s - 1,
            nominal.len()
        )));
    }
    for d in datasets {
        d.validate()?;
    }
    let (scaled, scaling) = scale_io(datasets)?;

    let mut mappings = Vec::with_capacity(s - 1);
    let mut nominal_scaled = Vec::with_capacity(s - 1);
    for (k, input) in nominal.iter().enumerate() {
        let (src, dst) = (&scaled[k + 1], &scaled[k]);
        match input {
            NominalInput::Values(v) => {
                if v.nrows() != src.len() {
                    return Err(Error::MissingNominalValues(format!(
                        "fidelity {} has {} training rows but {} nominal values",
                        k + 2,
                        src.len(),
                        v.nrows()
                    )));
                }
                if v.ncols() != dst.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "nominal values must have {} columns, got {}",
                        dst.dim(),
                        v.ncols()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteValue("nominal mapped values".into()));
                }
                let v_s = scaling.scale_x(k + 1, v)?;
                let kernel = LayerKernel::SeArd(SeArdParams::unit(src.dim()));
                let s_scale = config.s_init_scale * kernel.diag_variance();
                let mut layer = SparseVariationalLayer::new(
                    src.x.clone(),
                    v_s.clone(),
                    kernel,
                    config.map_noise_init,
                    MeanFunction::Zero,
                    s_scale,
                )?;
                layer.jitter = config.inducing_jitter;
                if config.white_kernel {
                    layer.white = config.white_init;
                }
                mappings.push(MappingStage::Learned(MappingLayer {
                    layer,
                    learn_white: config.white_kernel,
                }));
                nominal_scaled.push(Some(v_s));
            }
            NominalInput::Frozen { a, b } => {
                let (a_s, b_s) = scale_linear(a, b, &datasets[k + 1].bounds, &datasets[k].bounds)?;
                mappings.push(MappingStage::Frozen { a: a_s, b: b_s });
                nominal_scaled.push(None);
            }
        }
    }

    let mut fidelities = Vec::with_capacity(s);
    for (l, d) in scaled.iter().enumerate() {
        let y = col_matrix(&d.y);
        let layer = if l == 0 {
            let kernel = LayerKernel::SeArd(SeArdParams::unit(d.dim()));
            let s_scale = config.s_init_scale * kernel.diag_variance();
            SparseVariationalLayer::new(d.x.clone(), y, kernel, config.noise_init, MeanFunction::Zero, s_scale)?
        } else {
            let kernel = LayerKernel::Composite(CompositeMfParams::unit(d.dim()));
            let s_scale = config.s_init_scale * kernel.diag_variance();
            let z = DenseMatrix::from_fn(d.len(), d.dim() + 1, |i, j| if j < d.dim() { d.x[(i, j)] } else { 0.0 });
            SparseVariationalLayer::new(z, y, kernel, config.noise_init, MeanFunction::PreviousOutput, s_scale)?
        };
        let mut layer = layer;
        layer.jitter = config.inducing_jitter;
        fidelities.push(layer);
    }

    let mut model = MfDgpModel {
        fidelities,
        mappings,
        x: scaled.iter().map(|d| d.x.clone()).collect(),
        y: scaled.iter().map(|d| col_matrix(&d.y)).collect(),
        nominal: nominal_scaled,
        scaling,
        config: config.clone(),
        elbo_history: Vec::new(),
        adam: None,
        skipped_nat_steps: 0,
        max_jitter: 0.0,
    };
    model.constrain_inducing()?;
    Ok(model)
}

/// Tape leaves and factorizations of one learned mapping stage.
struct MapGraph {
    kv: KernelVars,
    ind: InducingGraph,
    q_mean: Var,
    q_cov: Vec<Var>,
    log_noise: Var,
    white: Option<Var>,
}

enum MapNode {
    Learned(MapGraph),
    Frozen { a: Var, b: Vec<f64> },
}

struct FidGraph {
    kv: KernelVars,
    ind: InducingGraph,
    q_mean: Var,
    q_cov: Var,
    log_noise: Var,
    /// Constrained last inducing column (layers ≥ 2).
    aug: Option<Var>,
}

struct ModelGraph<'t> {
    t: &'t Tape,
    maps: Vec<MapNode>,
    fids: Vec<FidGraph>,
    euclid: Vec<Var>,
}

impl<'t> ModelGraph<'t> {
    fn build(t: &'t Tape, model: &MfDgpModel) -> Self {
        let blocks = model.euclidean_blocks();
        let euclid: Vec<Var> = blocks.into_iter().map(|b| t.leaf(b)).collect();
        let mut cursor = 0;
        let mut take = |n: usize| {
            let out = &euclid[cursor..cursor + n];
            cursor += n;
            out.to_vec()
        };

        let mut maps = Vec::new();
        for stage in &model.mappings {
            match stage {
                MappingStage::Learned(m) => {
                    let nk = m.layer.kernel.log_blocks().len();
                    let kv = KernelVars::from_vars(&m.layer.kernel, &take(nk));
                    let w = take(1)[0];
                    let log_noise = take(1)[0];
                    let white = if m.learn_white {
                        Some(t.exp(take(1)[0]))
                    } else if m.layer.white > 0.0 {
                        Some(t.scalar(m.layer.white))
                    } else {
                        None
                    };
                    let ind = inducing_graph(t, &kv, w, m.layer.jitter, white);
                    let q_mean = t.leaf(m.layer.q_mean.clone());
                    let q_cov = (0..m.layer.num_outputs()).map(|j| t.leaf(m.layer.q_cov(j))).collect();
                    maps.push(MapNode::Learned(MapGraph {
                        kv,
                        ind,
                        q_mean,
                        q_cov,
                        log_noise,
                        white,
                    }));
                }
                MappingStage::Frozen { a, b } => maps.push(MapNode::Frozen {
                    a: t.leaf(a.clone()),
                    b: b.clone(),
                }),
            }
        }

        let mut raw = Vec::new();
        for layer in &model.fidelities {
            let nk = layer.kernel.log_blocks().len();
            let kv = KernelVars::from_vars(&layer.kernel, &take(nk));
            let z_free = take(1)[0];
            let log_noise = take(1)[0];
            raw.push((kv, z_free, log_noise));
        }

        let mut g = ModelGraph {
            t,
            maps,
            fids: Vec::new(),
            euclid: euclid.clone(),
        };
        for (l, (kv, z_free, log_noise)) in raw.into_iter().enumerate() {
            let layer = &model.fidelities[l];
            let (z, aug) = if l == 0 {
                (z_free, None)
            } else {
                let h = g.map_mean(l - 1, z_free);
                let prev = g.mean_chain(l - 1, h);
                (t.hcat(&[z_free, prev]), Some(prev))
            };
            let ind = inducing_graph(t, &kv, z, layer.jitter, None);
            g.fids.push(FidGraph {
                kv,
                ind,
                q_mean: t.leaf(layer.q_mean.clone()),
                q_cov: t.leaf(layer.q_cov(0)),
                log_noise,
                aug,
            });
        }
        g
    }

    fn fid_conditional(&self, l: usize, input: Var, mean_x: Option<Var>) -> (Var, Var) {
        let f = &self.fids[l];
        conditional_graph(self.t, &f.kv, &f.ind, input, f.q_mean, &[f.q_cov], mean_x, f.aug, None)
    }

    fn map_conditional(&self, m: &MapGraph, x: Var) -> (Var, Var) {
        conditional_graph(self.t, &m.kv, &m.ind, x, m.q_mean, &m.q_cov, None, None, m.white)
    }

    fn frozen(&self, a: Var, b: &[f64], x: Var) -> Var {
        let n = self.t.shape(x).0;
        self.t.add_const(self.t.matmul(x, a), &tile_row(b, n))
    }

    /// Mean of mapping stage `k` at `x`.
    fn map_mean(&self, k: usize, x: Var) -> Var {
        match &self.maps[k] {
            MapNode::Learned(m) => self.map_conditional(m, x).0,
            MapNode::Frozen { a, b } => self.frozen(*a, b, x),
        }
    }

    fn reparam(&self, mean: Var, var: Var, rng: &mut RngStream) -> Var {
        let t = self.t;
        let (r, c) = t.shape(mean);
        let eps = DenseMatrix::from_fn(r, c, |_, _| rng.normal());
        let sd = t.sqrt(t.clamp_min(var, SAMPLE_VAR_FLOOR));
        t.add(mean, t.mul(sd, t.leaf(eps)))
    }

    fn map_sample(&self, k: usize, x: Var, rng: &mut RngStream) -> Var {
        match &self.maps[k] {
            MapNode::Learned(m) => {
                let (mean, var) = self.map_conditional(m, x);
                self.reparam(mean, var, rng)
            }
            MapNode::Frozen { a, b } => self.frozen(*a, b, x),
        }
    }

    /// Deterministic mean propagation to layer `l` at its own coordinates.
    fn mean_chain(&self, l: usize, x: Var) -> Var {
        if l == 0 {
            return self.fid_conditional(0, x, None).0;
        }
        let h = self.map_mean(l - 1, x);
        let prev = self.mean_chain(l - 1, h);
        let input = self.t.hcat(&[x, prev]);
        self.fid_conditional(l, input, Some(prev)).0
    }

    /// Marginal of layer `l` at `x` with inner layers sampled.
    fn sample_chain(&self, l: usize, x: Var, rng: &mut RngStream) -> (Var, Var) {
        if l == 0 {
            return self.fid_conditional(0, x, None);
        }
        let h = self.map_sample(l - 1, x, rng);
        let (m, v) = self.sample_chain(l - 1, h, rng);
        let f = self.reparam(m, v, rng);
        let input = self.t.hcat(&[x, f]);
        self.fid_conditional(l, input, Some(f))
    }

    fn elbo(&self, model: &MfDgpModel, rng: &mut RngStream) -> Var {
        let t = self.t;
        let mut total = t.scalar(0.0);
        let reps = model.config.train_samples;
        for (l, (x, y)) in model.x.iter().zip(&model.y).enumerate() {
            let xv = t.leaf(x.clone());
            for _ in 0..reps {
                let (m, v) = self.sample_chain(l, xv, rng);
                let ll = expected_loglik_graph(t, y, m, v, self.fids[l].log_noise);
                total = t.add(total, t.scale(ll, 1.0 / reps as f64));
            }
        }
        for (k, node) in self.maps.iter().enumerate() {
            if let (MapNode::Learned(m), Some(nom)) = (node, &model.nominal[k]) {
                let xv = t.leaf(model.x[k + 1].clone());
                let (mean, var) = self.map_conditional(m, xv);
                total = t.add(total, expected_loglik_graph(t, nom, mean, var, m.log_noise));
                let p = m.q_cov.len();
                for (j, &s) in m.q_cov.iter().enumerate() {
                    let qm = if p == 1 { m.q_mean } else { t.column(m.q_mean, j) };
                    total = t.sub(total, kl_graph(t, &m.ind, qm, s, None));
                }
            }
        }
        for f in &self.fids {
            total = t.sub(total, kl_graph(t, &f.ind, f.q_mean, f.q_cov, f.aug));
        }
        total
    }
}

fn flatten(blocks: &[DenseMatrix]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.iter().copied()).collect()
}

fn unflatten(values: &[f64], like: &[DenseMatrix]) -> Vec<DenseMatrix> {
    let mut off = 0;
    like.iter()
        .map(|b| {
            let m = DenseMatrix::from_column_slice(b.nrows(), b.ncols(), &values[off..off + b.len()]);
            off += b.len();
            m
        })
        .collect()
}

impl MfDgpModel {
    pub fn num_fidelities(&self) -> usize {
        self.fidelities.len()
    }

    pub fn input_dim(&self, fidelity: usize) -> Result<usize> {
        self.x
            .get(fidelity.wrapping_sub(1))
            .map(|x| x.ncols())
            .ok_or_else(|| Error::DimensionMismatch(format!("no fidelity {fidelity}")))
    }

    /// Euclidean parameters as matrices: per learned mapping the kernel log
    /// blocks, `W`, the log noise and optionally the log white variance; per
    /// fidelity layer the kernel log blocks, the free inducing block and the
    /// log noise.
    pub fn euclidean_blocks(&self) -> Vec<DenseMatrix> {
        let scalar = |v: f64| DenseMatrix::from_element(1, 1, v);
        let mut out = Vec::new();
        for stage in &self.mappings {
            if let MappingStage::Learned(m) = stage {
                out.extend(m.layer.kernel.log_blocks());
                out.push(m.layer.z.clone());
                out.push(scalar(m.layer.noise.ln()));
                if m.learn_white {
                    out.push(scalar(m.layer.white.ln()));
                }
            }
        }
        for (l, layer) in self.fidelities.iter().enumerate() {
            out.extend(layer.kernel.log_blocks());
            out.push(self.free_inducing(l));
            out.push(scalar(layer.noise.ln()));
        }
        out
    }

    /// Inverse of [`MfDgpModel::euclidean_blocks`]; floors are applied.
    pub fn set_euclidean_blocks(&mut self, blocks: &[DenseMatrix]) {
        let floor = self.config.noise_floor;
        let mut it = blocks.iter();
        for stage in &mut self.mappings {
            if let MappingStage::Learned(m) = stage {
                let nk = m.layer.kernel.log_blocks().len();
                let kb: Vec<DenseMatrix> = it.by_ref().take(nk).cloned().collect();
                m.layer.kernel.set_log_blocks(&kb);
                m.layer.z = it.next().expect("block count").clone();
                m.layer.noise = it.next().expect("block count")[(0, 0)].exp().max(floor);
                if m.learn_white {
                    m.layer.white = it.next().expect("block count")[(0, 0)].exp().max(WHITE_FLOOR);
                }
            }
        }
        for layer in &mut self.fidelities {
            let nk = layer.kernel.log_blocks().len();
            let kb: Vec<DenseMatrix> = it.by_ref().take(nk).cloned().collect();
            layer.kernel.set_log_blocks(&kb);
            let z_free = it.next().expect("block count");
            let d = z_free.ncols();
            layer.z.columns_mut(0, d).copy_from(z_free);
            layer.noise = it.next().expect("block count")[(0, 0)].exp().max(floor);
        }
    }

    /// Flat indices of every likelihood log-noise parameter and of every
    /// free inducing input, in that order.
    pub fn noise_and_inducing_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let (mut noise, mut inducing) = (Vec::new(), Vec::new());
        let mut off = 0;
        let size = |b: &[DenseMatrix]| -> usize { b.iter().map(|m| m.len()).sum() };
        for stage in &self.mappings {
            if let MappingStage::Learned(m) = stage {
                off += size(&m.layer.kernel.log_blocks());
                inducing.extend(off..off + m.layer.z.len());
                off += m.layer.z.len();
                noise.push(off);
                off += 1 + usize::from(m.learn_white);
            }
        }
        for (l, layer) in self.fidelities.iter().enumerate() {
            off += size(&layer.kernel.log_blocks());
            let nz = self.free_inducing(l).len();
            inducing.extend(off..off + nz);
            off += nz;
            noise.push(off);
            off += 1;
        }
        (noise, inducing)
    }

    pub fn euclidean_params(&self) -> Vec<f64> {
        flatten(&self.euclidean_blocks())
    }

    pub fn set_euclidean_params(&mut self, values: &[f64]) -> Result<()> {
        let like = self.euclidean_blocks();
        let n: usize = like.iter().map(|b| b.len()).sum();
        if values.len() != n {
            return Err(Error::LengthMismatch(values.len(), n));
        }
        self.set_euclidean_blocks(&unflatten(values, &like));
        Ok(())
    }

    fn free_inducing(&self, l: usize) -> DenseMatrix {
        let layer = &self.fidelities[l];
        let d = if l == 0 { layer.z.ncols() } else { layer.z.ncols() - 1 };
        layer.z.columns(0, d).into_owned()
    }

    /// Variational layers in gradient order: learned mappings, then fidelities.
    pub fn variational_layers_mut(&mut self) -> Vec<&mut SparseVariationalLayer> {
        let mut out: Vec<&mut SparseVariationalLayer> = Vec::new();
        for stage in &mut self.mappings {
            if let MappingStage::Learned(m) = stage {
                out.push(&mut m.layer);
            }
        }
        out.extend(self.fidelities.iter_mut());
        out
    }

    fn learned_mapping_count(&self) -> usize {
        self.mappings.iter().filter(|m| matches!(m, MappingStage::Learned(_))).count()
    }

    pub fn variational_layers(&self) -> Vec<&SparseVariationalLayer> {
        let mut out: Vec<&SparseVariationalLayer> = Vec::new();
        for stage in &self.mappings {
            if let MappingStage::Learned(m) = stage {
                out.push(&m.layer);
            }
        }
        out.extend(self.fidelities.iter());
        out
    }

    /// Refreshes the last inducing column of every layer `l ≥ 2` with the
    /// mean of layer `l − 1` at the mean-mapped free inducing inputs.
    pub fn constrain_inducing(&mut self) -> Result<()> {
        for l in 1..self.fidelities.len() {
            let z_free = self.free_inducing(l);
            let h = self.map_mean_plain(l - 1, &z_free)?;
            let prev = self.mean_chain_plain(l - 1, &h)?;
            let d = z_free.ncols();
            self.fidelities[l].z.set_column(d, &prev.column(0));
        }
        Ok(())
    }

    fn map_mean_plain(&self, k: usize, x: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.mappings[k] {
            MappingStage::Learned(m) => Ok(sparse_conditional(&m.layer, x)?.0),
            MappingStage::Frozen { a, b } => Ok(x * a + tile_row(b, x.nrows())),
        }
    }

    fn mean_chain_plain(&self, l: usize, x: &DenseMatrix) -> Result<DenseMatrix> {
        if l == 0 {
            return Ok(sparse_conditional(&self.fidelities[0], x)?.0);
        }
        let h = self.map_mean_plain(l - 1, x)?;
        let prev = self.mean_chain_plain(l - 1, &h)?;
        let input = hcat(x, &prev);
        Ok(sparse_conditional(&self.fidelities[l], &input)?.0)
    }

    /// One stochastic estimate of the ELBO.
    pub fn elbo_estimate(&self, rng: &mut RngStream) -> Result<f64> {
        let t = Tape::with_ladder(vec![0.0, 1e-10, 1e-8, 1e-6]);
        let g = ModelGraph::build(&t, self);
        let elbo = g.elbo(self, rng);
        t.check()?;
        let v = t.scalar_value(elbo);
        if !v.is_finite() {
            return Err(Error::NonFiniteElbo {
                iteration: self.elbo_history.len(),
            });
        }
        Ok(v)
    }

    /// ELBO estimate with gradients for every parameter.
    pub fn elbo_and_gradients(&self, rng: &mut RngStream) -> Result<ElboEval> {
        let t = Tape::with_ladder(vec![0.0, 1e-10, 1e-8, 1e-6]);
        let g = ModelGraph::build(&t, self);
        let elbo = g.elbo(self, rng);
        t.check()?;
        let value = t.scalar_value(elbo);
        if !value.is_finite() {
            return Err(Error::NonFiniteElbo {
                iteration: self.elbo_history.len(),
            });
        }
        let grads = t.gradients(elbo);
        let euclidean: Vec<f64> = g.euclid.iter().flat_map(|&v| grads.get(v).iter().copied().collect::<Vec<_>>()).collect();
        let block = |qm: Var, covs: &[Var]| -> Vec<BlockGradient> {
            let gm = grads.get(qm);
            covs.iter()
                .enumerate()
                .map(|(j, &s)| {
                    let gs = grads.get(s);
                    BlockGradient {
                        mean: gm.columns(j, 1).into_owned(),
                        cov: (&gs + gs.transpose()) * 0.5,
                    }
                })
                .collect()
        };
        let mut variational = Vec::new();
        for node in &g.maps {
            if let MapNode::Learned(m) = node {
                variational.push(block(m.q_mean, &m.q_cov));
            }
        }
        for f in &g.fids {
            variational.push(block(f.q_mean, &[f.q_cov]));
        }
        Ok(ElboEval {
            value,
            euclidean,
            variational,
            max_jitter: t.max_jitter(),
        })
    }

    fn iteration_rng(&self, iteration: usize, pass: u64) -> RngStream {
        RngStream::new(self.config.seed).split(2 * iteration as u64 + pass)
    }

    /// Runs `config.iterations` further iterations, each an Adam step on the
    /// Euclidean parameters followed by a natural-gradient step on every
    /// variational distribution. Stops early once `budget` is exhausted.
    pub fn train(&mut self, budget: Option<Duration>) -> Result<TrainReport> {
        self.train_iterations(self.config.iterations, budget)
    }

    pub fn train_iterations(&mut self, iterations: usize, budget: Option<Duration>) -> Result<TrainReport> {
        let start = Instant::now();
        let n_params = self.euclidean_params().len();
        let mut adam = match self.adam.take() {
            Some(a) if a.len() == n_params => a,
            _ => AdamState::new(n_params, self.config.adam_step, self.config.beta1, self.config.beta2, true),
        };
        let skipped_before = self.skipped_nat_steps;
        let (frozen_noise, inducing) = self.noise_and_inducing_indices();
        let mut done = 0;
        let mut stopped = false;
        let result = (|| -> Result<()> {
            for _ in 0..iterations {
                if budget.is_some_and(|b| start.elapsed() >= b) {
                    stopped = true;
                    break;
                }
                let iteration = self.elbo_history.len();
                let mut eval = self
                    .elbo_and_gradients(&mut self.iteration_rng(iteration, 0))
                    .map_err(|e| nonfinite_at(e, iteration))?;
                self.max_jitter = self.max_jitter.max(eval.max_jitter);
                let warming = iteration < self.config.warmup;
                if warming {
                    for &i in &frozen_noise {
                        eval.euclidean[i] = 0.0;
                    }
                }
                if !self.config.learn_inducing {
                    for &i in &inducing {
                        eval.euclidean[i] = 0.0;
                    }
                }
                let mut params = self.euclidean_params();
                adam.step(&mut params, &eval.euclidean)
                    .map_err(|_| Error::NonFiniteElbo { iteration })?;
                self.set_euclidean_params(&params)?;
                self.elbo_history.push(eval.value);
                done += 1;
                if warming {
                    continue;
                }

                let eval = self
                    .elbo_and_gradients(&mut self.iteration_rng(iteration, 1))
                    .map_err(|e| nonfinite_at(e, iteration))?;
                self.max_jitter = self.max_jitter.max(eval.max_jitter);
                let n_maps = self.learned_mapping_count();
                let (map_gamma, gamma) = (self.config.map_nat_step, self.config.nat_step);
                let mut skipped = 0;
                for (li, (layer, grads)) in self.variational_layers_mut().into_iter().zip(&eval.variational).enumerate() {
                    let gamma = if li < n_maps { map_gamma } else { gamma };
                    skipped += natural_step(layer, grads, gamma).map_err(|_| Error::NonFiniteElbo { iteration })?;
                }
                self.skipped_nat_steps += skipped;
            }
            Ok(())
        })();
        self.adam = Some(adam);
        self.constrain_inducing()?;
        result?;
        Ok(TrainReport {
            iterations: done,
            stopped_on_budget: stopped,
            skipped_nat_steps: self.skipped_nat_steps - skipped_before,
        })
    }

    /// ELBO trace sampled every `config.trace_every` iterations, plus the
    /// last completed iteration.
    pub fn trace(&self) -> Vec<(usize, f64)> {
        let every = self.config.trace_every.max(1);
        let n = self.elbo_history.len();
        let mut out: Vec<(usize, f64)> = (0..n).step_by(every).map(|i| (i, self.elbo_history[i])).collect();
        if n > 0 && !(n - 1).is_multiple_of(every) {
            out.push((n - 1, self.elbo_history[n - 1]));
        }
        out
    }

    /// Mixture prediction at raw inputs `x` of fidelity `input_fidelity`
    /// for the output of fidelity `target_fidelity ≤ input_fidelity`.
    pub fn predict(&self, x: &DenseMatrix, input_fidelity: usize, target_fidelity: usize, opts: &PredictOptions) -> Result<Prediction> {
        let s = self.num_fidelities();
        if input_fidelity == 0 || input_fidelity > s || target_fidelity == 0 || target_fidelity > input_fidelity {
            return Err(Error::DimensionMismatch(format!(
                "cannot predict fidelity {target_fidelity} from inputs of fidelity {input_fidelity} in a {s}-fidelity model"
            )));
        }
        let xs = self.scaling.scale_x(input_fidelity, x)?;
        let mut model = self.clone();
        model.constrain_inducing()?;
        let (i, t) = (input_fidelity - 1, target_fidelity - 1);
        let k = if opts.zero_noise { 1 } else { opts.samples.max(1) };
        let n = xs.nrows();
        let mut rng = RngStream::new(opts.seed);
        let mut draw = |r: usize, c: usize| -> DenseMatrix {
            if opts.zero_noise {
                DenseMatrix::zeros(r, c)
            } else {
                DenseMatrix::from_fn(r, c, |_, _| rng.normal())
            }
        };
        let mut sample_means = DenseMatrix::zeros(n, k);
        let mut sample_vars = DenseMatrix::zeros(n, k);
        // Mapping-stage conditionals that do not depend on earlier draws.
        let top = if i > 0 {
            match &model.mappings[i - 1] {
                MappingStage::Learned(m) => Some(sparse_conditional(&m.layer, &xs)?),
                MappingStage::Frozen { .. } => None,
            }
        } else {
            None
        };
        for j in 0..k {
            let mut coords = vec![DenseMatrix::zeros(0, 0); i + 1];
            coords[i] = xs.clone();
            for l in (0..i).rev() {
                coords[l] = match &model.mappings[l] {
                    MappingStage::Frozen { a, b } => &coords[l + 1] * a + tile_row(b, n),
                    MappingStage::Learned(m) => {
                        let (mean, var) = if l + 1 == i {
                            top.clone().expect("top mapping")
                        } else {
                            sparse_conditional(&m.layer, &coords[l + 1])?
                        };
                        let eps = draw(mean.nrows(), mean.ncols());
                        mean + var.map(f64::sqrt).component_mul(&eps)
                    }
                };
            }
            let (mut m, mut v) = sparse_conditional(&model.fidelities[0], &coords[0])?;
            for l in 1..=t {
                let eps = draw(n, 1);
                let f = &m + v.map(f64::sqrt).component_mul(&eps);
                let input = hcat(&coords[l], &f);
                let (m2, v2) = sparse_conditional(&model.fidelities[l], &input)?;
                m = m2;
                v = v2;
            }
            sample_means.set_column(j, &m.column(0));
            sample_vars.set_column(j, &v.column(0));
        }
        let sc = &self.scaling;
        let mean = DVector::from_fn(n, |r, _| sample_means.row(r).mean());
        let var = DVector::from_fn(n, |r, _| {
            let mu = mean[r];
            let within = sample_vars.row(r).mean();
            let between = sample_means.row(r).iter().map(|v| (v - mu).powi(2)).sum::<f64>() / k as f64;
            within + between
        });
        Ok(Prediction {
            mean: mean.map(|v| sc.unscale_y(v)),
            var: var.map(|v| sc.unscale_var(v)),
            sample_means: sample_means.map(|v| sc.unscale_y(v)),
            sample_vars: sample_vars.map(|v| sc.unscale_var(v)),
            untrained: self.elbo_history.is_empty(),
        })
    }

    /// Serializes the model with its scalings and configuration.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = CheckpointRef {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&ck).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        Ok(ck.model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    schema_version: u32,
    model: &'a MfDgpModel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    schema_version: u32,
    model: MfDgpModel,
}

fn nonfinite_at(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFiniteElbo { .. } => Error::NonFiniteElbo { iteration },
        other => other,
    }
}

fn hcat(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_gp::{ExactGpModel, MeanSpec};
    use crate::svgp::gaussian_elbo;
    use approx::assert_abs_diff_eq;

    fn lin(n: usize, lo: f64, hi: f64) -> DenseMatrix {
        DenseMatrix::from_fn(n, 1, |i, _| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
    }

    fn two_fidelity(nominal: bool) -> MfDgpModel {
        let x1 = lin(6, 0.0, 1.0);
        let y1: Vec<f64> = x1.iter().map(|x| (8.0 * x).sin()).collect();
        let x2 = lin(4, 0.0, 1.0);
        let y2: Vec<f64> = x2.iter().map(|x| (8.0 * (0.8 * x + 0.1)).sin() * 1.2 + x).collect();
        let lf = FidelityDataset::new(x1, y1, vec![(0.0, 1.0)], 1).unwrap();
        let hf = FidelityDataset::new(x2.clone(), y2, vec![(0.0, 1.0)], 2).unwrap();
        let input = if nominal {
            NominalInput::Values(x2.map(|x| 0.8 * x + 0.1))
        } else {
            NominalInput::Frozen {
                a: DenseMatrix::identity(1, 1),
                b: vec![0.0],
            }
        };
        let config = TrainConfig {
            warmup: 2,
            ..TrainConfig::fast()
        };
        build_model(&[lf, hf], &[input], &config).unwrap()
    }

    #[test]
    fn build_initializes_from_data() {
        let m = two_fidelity(true);
        let MappingStage::Learned(map) = &m.mappings[0] else { panic!() };
        assert!((&map.layer.q_mean - m.x[1].map(|x| 0.8 * x + 0.1)).amax() < 1e-12);
        assert!((&map.layer.z - &m.x[1]).amax() < 1e-15);
        assert!((&m.fidelities[0].q_mean - &m.y[0]).amax() < 1e-15);
        assert!((&m.fidelities[1].q_mean - &m.y[1]).amax() < 1e-15);
        assert!((m.fidelities[0].q_cov(0) - DenseMatrix::identity(6, 6) * 1e-5).amax() < 1e-18);
        assert_eq!(m.fidelities[1].z.ncols(), 2);
    }

    #[test]
    fn missing_nominal_values() {
        let m = two_fidelity(true);
        let lf = FidelityDataset::new(lin(6, 0.0, 1.0), vec![0.0, 1.0, 0.5, 0.2, 0.1, 0.3], vec![(0.0, 1.0)], 1).unwrap();
        let hf = FidelityDataset::new(lin(4, 0.0, 1.0), vec![0.0, 1.0, 0.5, 0.2], vec![(0.0, 1.0)], 2).unwrap();
        let r = build_model(&[lf.clone(), hf.clone()], &[NominalInput::Values(DenseMatrix::zeros(3, 1))], &m.config);
        assert!(matches!(r, Err(Error::MissingNominalValues(_))));
        let r = build_model(&[lf, hf], &[], &m.config);
        assert!(matches!(r, Err(Error::MissingNominalValues(_))));
    }

    #[test]
    fn elbo_is_deterministic_per_seed() {
        let m = two_fidelity(true);
        let a = m.elbo_estimate(&mut RngStream::new(4)).unwrap();
        let b = m.elbo_estimate(&mut RngStream::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_fidelity_matches_svgp() {
        let x = lin(5, 0.0, 1.0);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let ds = FidelityDataset::new(x.clone(), y, vec![(0.0, 1.0)], 1).unwrap();
        let m = build_model(&[ds], &[], &TrainConfig::fast()).unwrap();
        let e = m.elbo_estimate(&mut RngStream::new(0)).unwrap();
        let (e2, _) = gaussian_elbo(&m.fidelities[0], &m.x[0], &m.y[0]).unwrap();
        assert_abs_diff_eq!(e, e2, epsilon = 1e-10);

        let opts = PredictOptions {
            samples: 7,
            seed: 1,
            zero_noise: false,
        };
        let xs = lin(9, 0.0, 1.0);
        let p = m.predict(&xs, 1, 1, &opts).unwrap();
        let (mu, var) = sparse_conditional(&m.fidelities[0], &m.scaling.scale_x(1, &xs).unwrap()).unwrap();
        for i in 0..9 {
            assert_abs_diff_eq!(m.scaling.scale_y(p.mean[i]), mu[(i, 0)], epsilon = 1e-10);
            assert_abs_diff_eq!(p.var[i] / m.scaling.y_std.powi(2), var[(i, 0)], epsilon = 1e-10);
        }
        assert!(p.untrained);
    }

    #[test]
    fn elbo_below_exact_marginal_likelihood() {
        let mut rng = RngStream::new(31);
        for _ in 0..10 {
            let x = DenseMatrix::from_fn(6, 1, |_, _| rng.uniform());
            let y: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let ds = FidelityDataset::new(x, y, vec![(0.0, 1.0)], 1).unwrap();
            let mut m = build_model(&[ds], &[], &TrainConfig::fast()).unwrap();
            m.fidelities[0].jitter = 0.0;
            m.fidelities[0].q_mean = DenseMatrix::from_fn(6, 1, |_, _| rng.normal());
            let elbo = m.elbo_estimate(&mut rng).unwrap();
            let l = &m.fidelities[0];
            let exact = ExactGpModel::with_params(
                m.x[0].clone(),
                DVector::from_column_slice(m.y[0].as_slice()),
                match &l.kernel {
                    LayerKernel::SeArd(p) => p.clone(),
                    _ => unreachable!(),
                },
                l.noise,
                MeanSpec::Fixed(0.0),
            )
            .unwrap();
            assert!(elbo <= exact.log_marginal_likelihood() + 1e-9);
        }
    }

    #[test]
    fn augmented_column_tracks_free_block() {
        let mut m = two_fidelity(true);
        let before = m.fidelities[1].z.column(1).clone_owned();
        let mut blocks = m.euclidean_blocks();
        // Shift the free inducing block of the HF layer.
        let idx = blocks.len() - 2;
        blocks[idx].add_scalar_mut(0.05);
        m.set_euclidean_blocks(&blocks);
        m.constrain_inducing().unwrap();
        let after = m.fidelities[1].z.column(1).clone_owned();
        assert!((before - after).amax() > 1e-6);
        let z_free = m.fidelities[1].z.columns(0, 1).into_owned();
        let h = m.map_mean_plain(0, &z_free).unwrap();
        let want = sparse_conditional(&m.fidelities[0], &h).unwrap().0;
        assert!((m.fidelities[1].z.column(1) - want.column(0)).amax() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = two_fidelity(true);
        let mut rng = RngStream::new(8);
        for layer in m.variational_layers_mut() {
            let k = layer.num_inducing();
            for j in 0..layer.num_outputs() {
                let g = DenseMatrix::from_fn(k, k, |_, _| rng.uniform_range(-0.1, 0.1));
                layer.q_chol[j] = (DenseMatrix::identity(k, k) * 0.2 + g).lower_triangle();
            }
        }
        let eval = m.elbo_and_gradients(&mut RngStream::new(77)).unwrap();
        let p0 = m.euclidean_params();
        let h = 1e-4;
        for i in 0..p0.len() {
            let f = |delta: f64| {
                let mut mm = m.clone();
                let mut p = p0.clone();
                p[i] += delta;
                mm.set_euclidean_params(&p).unwrap();
                mm.elbo_estimate(&mut RngStream::new(77)).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let g = eval.euclidean[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-5);
            assert!(rel <= 1e-3, "param {i}: tape {g} vs fd {fd}");
        }
    }

    #[test]
    fn variational_gradients_match_finite_differences() {
        let mut m = two_fidelity(true);
        let mut rng = RngStream::new(9);
        for layer in m.variational_layers_mut() {
            let k = layer.num_inducing();
            for j in 0..layer.num_outputs() {
                let g = DenseMatrix::from_fn(k, k, |_, _| rng.uniform_range(-0.1, 0.1));
                layer.q_chol[j] = (DenseMatrix::identity(k, k) * 0.3 + g).lower_triangle();
            }
        }
        let eval = m.elbo_and_gradients(&mut RngStream::new(5)).unwrap();
        let n_layers = m.variational_layers().len();
        let h = 1e-5;
        for li in 0..n_layers {
            let k = m.variational_layers()[li].num_inducing();
            for i in [0, k - 1] {
                // Mean entry.
                let f = |delta: f64| {
                    let mut mm = m.clone();
                    mm.variational_layers_mut()[li].q_mean[(i, 0)] += delta;
                    mm.elbo_estimate(&mut RngStream::new(5)).unwrap()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let g = eval.variational[li][0].mean[(i, 0)];
                assert!((g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()).max(1e-2), "layer {li} mean {i}: {g} vs {fd}");
                // Diagonal covariance entry.
                let f = |delta: f64| {
                    let mut mm = m.clone();
                    let layer = &mut mm.variational_layers_mut()[li];
                    let mut s = layer.q_cov(0);
                    s[(i, i)] += delta;
                    layer.q_chol[0] = s.cholesky().unwrap().l();
                    mm.elbo_estimate(&mut RngStream::new(5)).unwrap()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let g = eval.variational[li][0].cov[(i, i)];
                assert!((g - fd).abs() <= 1e-3 * g.abs().max(fd.abs()).max(1e-2), "layer {li} cov {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn zero_noise_prediction_is_mean_propagation() {
        let m = two_fidelity(true);
        let opts = PredictOptions {
            samples: 1,
            seed: 0,
            zero_noise: true,
        };
        let xs = lin(5, 0.0, 1.0);
        let p = m.predict(&xs, 2, 2, &opts).unwrap();
        let xsc = m.scaling.scale_x(2, &xs).unwrap();
        let h = m.map_mean_plain(0, &xsc).unwrap();
        let prev = m.mean_chain_plain(0, &h).unwrap();
        let (mu, _) = sparse_conditional(&m.fidelities[1], &hcat(&xsc, &prev)).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(m.scaling.scale_y(p.mean[i]), mu[(i, 0)], epsilon = 1e-10);
        }
    }

    #[test]
    fn mixture_variance_dominates_mean_variance() {
        let m = two_fidelity(true);
        let opts = PredictOptions {
            samples: 20,
            seed: 3,
            zero_noise: false,
        };
        let p = m.predict(&lin(8, 0.0, 1.0), 2, 2, &opts).unwrap();
        for i in 0..8 {
            assert!(p.var[i] + 1e-15 >= p.sample_vars.row(i).mean());
        }
    }

    #[test]
    fn frozen_mapping_equals_premapped_lf_prediction() {
        let m = two_fidelity(false);
        let opts = PredictOptions {
            samples: 3,
            seed: 0,
            zero_noise: false,
        };
        let xs = lin(6, 0.0, 1.0);
        let a = m.predict(&xs, 2, 1, &opts).unwrap();
        let b = m.predict(&xs, 1, 1, &opts).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-6);
        assert!((a.var - b.var).amax() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut m = two_fidelity(true);
        m.train_iterations(3, None).unwrap();
        let json = m.to_checkpoint_json().unwrap();
        let back = MfDgpModel::from_checkpoint_json(&json).unwrap();
        assert_eq!(back, m);
        let bad = json.replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        assert!(matches!(MfDgpModel::from_checkpoint_json(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let mut a = two_fidelity(true);
        let mut b = a.clone();
        a.train_iterations(6, None).unwrap();
        b.train_iterations(4, None).unwrap();
        b.train_iterations(2, None).unwrap();
        assert_eq!(a.elbo_history, b.elbo_history);
        let mut c = a.clone();
        c.train_iterations(0, None).unwrap();
        assert_eq!(c, a);
    }
}
