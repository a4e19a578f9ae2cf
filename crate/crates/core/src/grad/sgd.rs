use serde::{Deserialize, Serialize};

use super::{adjoint_solve, forward_mode_grads, param_grads_from_adjoint, tape_backward};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::loss_and_grad_z;
use crate::model::{
    fixed_point_solve, no_loop_forward, phi_residual, FixedPointConfig, IdgnnParams, ParamBlocks, ParamGradients,
    WellPosedness,
};
use crate::tensor::DenseMatrix;

/// How parameter gradients through the fixed point are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    /// One transposed fixed-point solve per graph.
    #[default]
    Adjoint,
    /// Forward sensitivities for every weight entry (expensive reference path).
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub mode: GradMode,
    pub fixed_point: FixedPointConfig,
    /// Start each solve from the previous step's solution for that graph.
    pub warm_start: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            mode: GradMode::Adjoint,
            fixed_point: FixedPointConfig::default(),
            warm_start: true,
        }
    }
}

/// Per-graph warm-start caches.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    z: Vec<Option<Vec<DenseMatrix>>>,
    u: Vec<Option<Vec<DenseMatrix>>>,
}

impl SgdState {
    pub fn new(num_graphs: usize) -> Self {
        SgdState {
            z: vec![None; num_graphs],
            u: vec![None; num_graphs],
        }
    }
}

/// Batch statistics of one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Mean max-abs fixed-point residual over the batch.
    pub residual: f64,
}

fn check_batch(batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(())
    }
}

fn apply_step(
    params: &mut IdgnnParams,
    wp: &WellPosedness,
    mut total: ParamGradients,
    batch_len: usize,
    lr: f64,
) -> Result<()> {
    total.scale(1.0 / batch_len as f64);
    if !total.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    params.descend(&total, lr, ParamBlocks::ALL);
    wp.project(params)
}

/// Solve, differentiate through the fixed point, average over the batch,
/// descend on `W`, `V` and the head, then project `W`.
#[allow(clippy::too_many_arguments)]
pub fn sgd_train_step(
    params: &mut IdgnnParams,
    wp: &WellPosedness,
    ds: &Dataset,
    batch: &[usize],
    masks: &[Vec<bool>],
    cfg: &SgdConfig,
    state: &mut SgdState,
) -> Result<StepStats> {
    check_batch(batch)?;
    let mut total = ParamGradients::zeros_like(params);
    let (mut loss, mut residual) = (0.0, 0.0);
    for &g in batch {
        let graph = &ds.graphs[g];
        let step = || -> Result<(f64, f64, ParamGradients, Vec<DenseMatrix>, Option<Vec<DenseMatrix>>)> {
            let init = if cfg.warm_start { state.z[g].as_deref() } else { None };
            let fp = fixed_point_solve(params, graph, &cfg.fixed_point, init)?;
            let lg = loss_and_grad_z(&params.head, fp.last(), graph.labels(), &masks[g], &ds.task)?;
            let (mut grads, u) = match cfg.mode {
                GradMode::Adjoint => {
                    let u_init = if cfg.warm_start { state.u[g].as_deref() } else { None };
                    let u = adjoint_solve(&fp, params, graph, &lg.dz, &cfg.fixed_point, u_init)?;
                    (param_grads_from_adjoint(&u, &fp, params, graph)?, Some(u))
                }
                GradMode::Forward => (forward_mode_grads(&fp, params, graph, &lg.dz, &cfg.fixed_point)?, None),
            };
            grads.head_weight = lg.d_head_weight;
            grads.head_bias = lg.d_head_bias;
            Ok((lg.loss, fp.residual, grads, fp.z, u))
        };
        let (l, r, grads, z, u) = step().map_err(|e| e.in_graph(g))?;
        loss += l;
        residual += r;
        total.axpy(1.0, &grads);
        state.z[g] = Some(z);
        state.u[g] = u;
    }
    apply_step(params, wp, total, batch.len(), cfg.lr)?;
    let m = batch.len() as f64;
    Ok(StepStats {
        loss: loss / m,
        residual: residual / m,
    })
}

/// Training step of the variant without the loop: embeddings are one pass
/// through the snapshots from zero, differentiated by backpropagation.
pub fn no_loop_train_step(
    params: &mut IdgnnParams,
    wp: &WellPosedness,
    ds: &Dataset,
    batch: &[usize],
    masks: &[Vec<bool>],
    lr: f64,
) -> Result<StepStats> {
    check_batch(batch)?;
    let mut total = ParamGradients::zeros_like(params);
    let (mut loss, mut residual) = (0.0, 0.0);
    for &g in batch {
        let graph = &ds.graphs[g];
        let mut step = || -> Result<(f64, f64)> {
            let tape = no_loop_forward(params, graph)?;
            let lg = loss_and_grad_z(&params.head, &tape.output, graph.labels(), &masks[g], &ds.task)?;
            tape_backward(params, graph, &tape, &lg.dz, &mut total)?;
            total.head_weight.axpy(1.0, &lg.d_head_weight);
            total.head_bias.iter_mut().zip(&lg.d_head_bias).for_each(|(a, b)| *a += b);
            Ok((lg.loss, phi_residual(params, graph, &tape.output)?))
        };
        let (l, r) = step().map_err(|e| e.in_graph(g))?;
        loss += l;
        residual += r;
    }
    apply_step(params, wp, total, batch.len(), lr)?;
    let m = batch.len() as f64;
    Ok(StepStats {
        loss: loss / m,
        residual: residual / m,
    })
}
