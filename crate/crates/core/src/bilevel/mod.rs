//! Single-loop bilevel training.
//!
//! Each dynamic graph is a block with lower-level objective
//! `g(z) = ‖z − φ(z)‖²` over its final-snapshot embedding. A step keeps a
//! running estimate `ẑ` of the minimizer and `v̂` of
//! `[∇²_zz g]⁻¹ ∇_z ℓ` per sampled block, forms the hypergradient
//! `−∇²_ωz g · v̂`, smooths it with a moving average and takes a projected step.
//! Hessian-vector products are directional derivatives of the reverse pass,
//! computed alongside it in one forward/tangent/reverse sweep.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DynamicGraph, Labels, Task};
use crate::error::{Error, Result};
use crate::metrics::loss_and_grad_z;
use crate::model::{phi_tape, IdgnnParams, ParamBlocks, ParamGradients, WellPosedness};
use crate::tensor::{gemm, spmm, DenseMatrix, LinearOperatorMt};

/// Everything one fused pass yields at `(z, v)`.
#[derive(Debug, Clone)]
pub struct LowerDerivatives {
    pub g: f64,
    /// `φ(z)`.
    pub phi: DenseMatrix,
    pub grad_z: DenseMatrix,
    /// `∇²_zz g · v`.
    pub hvp_zz: DenseMatrix,
    /// `∇_ω g` (head part zero).
    pub grad_omega: ParamGradients,
    /// `∇²_ωz g · v` (head part zero).
    pub hvp_omega_z: ParamGradients,
}

/// Forward pass of φ, its tangent along `v`, and the reverse pass of
/// `g = ‖z − φ(z)‖²` together with the tangent of that reverse pass.
pub fn lower_derivatives(
    z: &DenseMatrix,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    v: &DenseMatrix,
) -> Result<LowerDerivatives> {
    if v.shape() != z.shape() {
        return Err(Error::dims("hvp", format!("direction {:?} for z {:?}", v.shape(), z.shape())));
    }
    let act = params.activation;
    let tape = phi_tape(params, graph, z)?;
    let big_t = graph.num_snapshots();

    // Tangent of the forward pass: ẏ_t = σ'(P_t) ⊙ W ẏ_{t−1} A.
    let mut dot_inputs = Vec::with_capacity(big_t);
    let mut dot_pre = Vec::with_capacity(big_t);
    let mut y_dot = v.clone();
    for t in 0..big_t {
        let op = LinearOperatorMt::new(params.w_for(t), &graph.snapshot(t).adjacency)?;
        let p_dot = op.apply(&y_dot)?;
        let next = tape.preacts[t].map(|p| act.derivative(p)).hadamard(&p_dot);
        dot_inputs.push(y_dot);
        dot_pre.push(p_dot);
        y_dot = next;
    }

    let r = z.sub(&tape.output);
    let r_dot = v.sub(&y_dot);
    let mut g_back = r.clone();
    let mut g_back_dot = r_dot.clone();
    let mut grad_omega = ParamGradients::zeros_like(params);
    let mut hvp_omega_z = ParamGradients::zeros_like(params);
    for t in (0..big_t).rev() {
        let s = graph.snapshot(t);
        let p = &tape.preacts[t];
        let s1 = p.map(|x| act.derivative(x));
        let rt = s1.hadamard(&g_back);
        let rt_dot = p
            .map(|x| act.second_derivative(x))
            .hadamard(&dot_pre[t])
            .hadamard(&g_back)
            .add(&s1.hadamard(&g_back_dot));
        let ya = spmm(&tape.inputs[t], &s.adjacency)?;
        let ya_dot = spmm(&dot_inputs[t], &s.adjacency)?;
        let (ws, vs) = (params.w_slot(t), params.v_slot(t));
        gemm(-2.0, &rt, false, &ya, true, 1.0, &mut grad_omega.w[ws]);
        gemm(-2.0, &rt, false, &s.features, true, 1.0, &mut grad_omega.v[vs]);
        gemm(-2.0, &rt_dot, false, &ya, true, 1.0, &mut hvp_omega_z.w[ws]);
        gemm(-2.0, &rt, false, &ya_dot, true, 1.0, &mut hvp_omega_z.w[ws]);
        gemm(-2.0, &rt_dot, false, &s.features, true, 1.0, &mut hvp_omega_z.v[vs]);
        let op = LinearOperatorMt::new(params.w_for(t), &s.adjacency)?;
        g_back = op.apply_transpose(&rt)?;
        g_back_dot = op.apply_transpose(&rt_dot)?;
    }
    let g = r.dot(&r);
    let grad_z = r.sub(&g_back).scaled(2.0);
    let hvp_zz = r_dot.sub(&g_back_dot).scaled(2.0);
    Ok(LowerDerivatives {
        g,
        phi: tape.output,
        grad_z,
        hvp_zz,
        grad_omega,
        hvp_omega_z,
    })
}

/// `g(z) = ‖z − φ(z)‖²`.
pub fn lower_g(z: &DenseMatrix, params: &IdgnnParams, graph: &DynamicGraph) -> Result<f64> {
    let r = z.sub(&crate::model::phi(params, graph, z)?);
    Ok(r.dot(&r))
}

/// `∇_z g = 2(I − J_φ)ᵀ(z − φ(z))`.
pub fn grad_z_g(z: &DenseMatrix, params: &IdgnnParams, graph: &DynamicGraph) -> Result<DenseMatrix> {
    let tape = phi_tape(params, graph, z)?;
    let r = z.sub(&tape.output);
    let mut scratch = ParamGradients::zeros_like(params);
    let (jt_r, _) = crate::grad::tape_backward(params, graph, &tape, &r, &mut scratch)?;
    Ok(r.sub(&jt_r).scaled(2.0))
}

/// `∇_ω g` for the layer weights and input maps.
pub fn grad_omega_g(z: &DenseMatrix, params: &IdgnnParams, graph: &DynamicGraph) -> Result<ParamGradients> {
    let tape = phi_tape(params, graph, z)?;
    let r = z.sub(&tape.output);
    let mut grads = ParamGradients::zeros_like(params);
    crate::grad::tape_backward(params, graph, &tape, &r, &mut grads)?;
    grads.scale(-2.0);
    Ok(grads)
}

/// `∇²_zz g(z) · v`.
pub fn hvp_zz_g(z: &DenseMatrix, params: &IdgnnParams, graph: &DynamicGraph, v: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(lower_derivatives(z, params, graph, v)?.hvp_zz)
}

/// `∇²_ωz g(z) · v`, shaped like the parameters (head part zero).
pub fn hvp_wz_g(
    z: &DenseMatrix,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    v: &DenseMatrix,
) -> Result<ParamGradients> {
    Ok(lower_derivatives(z, params, graph, v)?.hvp_omega_z)
}

/// Running estimates for one dynamic graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    /// Estimate of the final-snapshot fixed point.
    pub z_hat: DenseMatrix,
    /// Estimate of `[∇²_zz g]⁻¹ ∇_z ℓ`.
    pub v_hat: DenseMatrix,
}

impl BlockState {
    pub fn zeros(d: usize, n: usize) -> Self {
        BlockState {
            z_hat: DenseMatrix::zeros(d, n),
            v_hat: DenseMatrix::zeros(d, n),
        }
    }

    /// Standard-normal entries scaled by `scale`.
    pub fn random(d: usize, n: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || DenseMatrix::from_fn(d, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        BlockState {
            z_hat: draw(),
            v_hat: draw(),
        }
    }
}

/// Result of updating one block.
#[derive(Debug, Clone)]
pub struct BlockUpdate {
    pub state: BlockState,
    /// `ℓ(f_θ(ẑ))` at the pre-update `ẑ`.
    pub loss: f64,
    /// `‖ẑ − φ(ẑ)‖_∞` at the pre-update `ẑ`.
    pub residual: f64,
    /// `∇²_ωz g(ẑ) v̂` at the pre-update estimates.
    pub hvp_omega_z: ParamGradients,
    /// `∂ℓ/∂θ` at the pre-update `ẑ`, in the head fields.
    pub head_grad: ParamGradients,
}

/// `ẑ ← (1−η₁)ẑ + η₁φ(ẑ)` and `v̂ ← v̂ − η₂∇²_zz g(ẑ)v̂ + η₂∇_zℓ(ẑ)`, both
/// right-hand sides at the pre-update `ẑ`.
#[allow(clippy::too_many_arguments)]
pub fn update_block(
    state: &BlockState,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    labels: &Labels,
    mask: &[bool],
    task: &Task,
    eta1: f64,
    eta2: f64,
) -> Result<BlockUpdate> {
    let ld = lower_derivatives(&state.z_hat, params, graph, &state.v_hat)?;
    let lg = loss_and_grad_z(&params.head, &state.z_hat, labels, mask, task)?;
    let mut z_hat = state.z_hat.scaled(1.0 - eta1);
    z_hat.axpy(eta1, &ld.phi);
    let mut v_hat = state.v_hat.clone();
    v_hat.axpy(-eta2, &ld.hvp_zz);
    v_hat.axpy(eta2, &lg.dz);
    let mut head_grad = ParamGradients::zeros_like(params);
    head_grad.head_weight = lg.d_head_weight;
    head_grad.head_bias = lg.d_head_bias;
    Ok(BlockUpdate {
        residual: state.z_hat.max_abs_diff(&ld.phi),
        state: BlockState { z_hat, v_hat },
        loss: lg.loss,
        hvp_omega_z: ld.hvp_omega_z,
        head_grad,
    })
}

/// `Δ = mean_j [∇_ω ℓ_j − ∇²_ωz g_j · v̂_j]`; the first term is zero for `W`, `V`
/// because the loss reaches them only through `z`.
pub fn hypergrad_estimate(updates: &[BlockUpdate]) -> Result<ParamGradients> {
    let first = updates.first().ok_or(Error::EmptyBatch)?;
    let mut delta = ParamGradients::zeros_like_grads(&first.hvp_omega_z);
    for u in updates {
        debug_assert_eq!(u.hvp_omega_z.head_weight.max_abs(), 0.0);
        delta.axpy(-1.0, &u.hvp_omega_z);
    }
    delta.scale(1.0 / updates.len() as f64);
    Ok(delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilevelConfig {
    /// Outer step `η₀`.
    pub eta0: f64,
    /// Fixed-point damping `η₁`.
    pub eta1: f64,
    /// Step of the inverse-HVP estimate `η₂`.
    pub eta2: f64,
    /// Moving-average weight `γ`.
    pub gamma: f64,
    pub batch_size: usize,
    /// Draw `ẑ`, `v̂` from a scaled normal instead of starting at zero.
    pub random_init: bool,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            eta0: 0.01,
            eta1: 0.9,
            eta2: 0.01,
            gamma: 0.9,
            batch_size: 1,
            random_init: false,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.eta1) || !unit(self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "η₁ and γ must lie in (0, 1], got {} and {}",
                self.eta1, self.gamma
            )));
        }
        if !(self.eta0 >= 0.0 && self.eta2 > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!("invalid bilevel settings {self:?}")));
        }
        Ok(())
    }
}

/// Outer-loop state: the moving-average hypergradient and the projection data.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: ParamGradients,
    pub step: usize,
    pub config: BilevelConfig,
    pub wellposedness: WellPosedness,
}

impl OptimizerState {
    pub fn new(params: &IdgnnParams, config: BilevelConfig, wellposedness: WellPosedness) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            m: ParamGradients::zeros_like(params),
            step: 0,
            config,
            wellposedness,
        })
    }
}

/// `m ← (1−γ)m + γΔ`, `ω ← Π(ω − η₀m)`, and `θ ← θ − η₀ ∂ℓ/∂θ` outside the projection.
pub fn momentum_project_step(
    opt: &mut OptimizerState,
    params: &mut IdgnnParams,
    delta: &ParamGradients,
    head_grad: &ParamGradients,
) -> Result<()> {
    let gamma = opt.config.gamma;
    opt.m.scale(1.0 - gamma);
    opt.m.axpy(gamma, delta);
    opt.m.clear_head();
    params.descend(&opt.m, opt.config.eta0, ParamBlocks::OMEGA);
    params.descend(head_grad, opt.config.eta0, ParamBlocks::HEAD);
    opt.wellposedness.project(params)?;
    opt.step += 1;
    Ok(())
}

/// Per-step training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub residual: f64,
    pub wall_ms: f64,
}

/// The bilevel trainer with its per-block states.
#[derive(Debug, Clone)]
pub struct BilevelTrainer {
    pub opt: OptimizerState,
    pub blocks: Vec<BlockState>,
}

impl BilevelTrainer {
    pub fn new(
        params: &IdgnnParams,
        ds: &Dataset,
        config: BilevelConfig,
        wellposedness: WellPosedness,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (d, n) = (params.hidden_dim(), ds.num_nodes());
        let blocks = (0..ds.graphs.len())
            .map(|_| {
                if config.random_init {
                    BlockState::random(d, n, 0.1, rng)
                } else {
                    BlockState::zeros(d, n)
                }
            })
            .collect();
        Ok(BilevelTrainer {
            opt: OptimizerState::new(params, config, wellposedness)?,
            blocks,
        })
    }

    /// One step of the algorithm on the given batch of graph ids. Blocks
    /// outside the batch are untouched.
    pub fn step(
        &mut self,
        params: &mut IdgnnParams,
        ds: &Dataset,
        batch: &[usize],
        masks: &[Vec<bool>],
    ) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let cfg = self.opt.config;
        let updates = batch
            .iter()
            .map(|&g| {
                let graph = &ds.graphs[g];
                update_block(
                    &self.blocks[g],
                    params,
                    graph,
                    graph.labels(),
                    &masks[g],
                    &ds.task,
                    cfg.eta1,
                    cfg.eta2,
                )
                .map_err(|e| e.in_graph(g))
            })
            .collect::<Result<Vec<_>>>()?;
        let delta = hypergrad_estimate(&updates)?;
        let mut head_grad = ParamGradients::zeros_like(params);
        for u in &updates {
            head_grad.axpy(1.0, &u.head_grad);
        }
        head_grad.scale(1.0 / updates.len() as f64);
        let step = self.opt.step;
        if !delta.is_finite() || !head_grad.is_finite() {
            return Err(Error::NonFiniteStep { step, what: "hypergradient" });
        }
        momentum_project_step(&mut self.opt, params, &delta, &head_grad)?;
        if !params.is_finite() {
            return Err(Error::NonFiniteStep { step, what: "parameters" });
        }
        let m = updates.len() as f64;
        let loss = updates.iter().map(|u| u.loss).sum::<f64>() / m;
        let residual = updates.iter().map(|u| u.residual).sum::<f64>() / m;
        for (&g, u) in batch.iter().zip(updates) {
            if !u.state.z_hat.is_finite() || !u.state.v_hat.is_finite() {
                return Err(Error::NonFiniteStep { step, what: "block state" });
            }
            self.blocks[g] = u.state;
        }
        Ok((loss, residual))
    }
}

/// Epoch-wise batches: a shuffled permutation of `items` cut into chunks.
pub fn epoch_batches(items: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order = items.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs `steps` bilevel steps over the graphs `train_graphs`, sampling batches
/// without replacement within each pass over the data.
#[allow(clippy::too_many_arguments)]
pub fn bilevel_train(
    ds: &Dataset,
    masks: &[Vec<bool>],
    train_graphs: &[usize],
    params: IdgnnParams,
    config: BilevelConfig,
    wellposedness: WellPosedness,
    steps: usize,
    seed: u64,
) -> Result<(IdgnnParams, Vec<StepLog>)> {
    if train_graphs.is_empty() && steps > 0 {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = params;
    let mut trainer = BilevelTrainer::new(&params, ds, config, wellposedness, &mut rng)?;
    let mut log = Vec::with_capacity(steps);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    while log.len() < steps {
        if queue.is_empty() {
            queue = epoch_batches(train_graphs, config.batch_size, &mut rng);
            queue.reverse();
        }
        let batch = queue.pop().expect("non-empty epoch");
        let start = std::time::Instant::now();
        let (loss, residual) = trainer.step(&mut params, ds, &batch, masks)?;
        log.push(StepLog {
            step: log.len(),
            loss,
            residual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((params, log))
}
