use serde::{Deserialize, Serialize};

use super::params::{Activation, IdgnnParams};
use crate::data::{prev_snapshot, DynamicGraph};
use crate::error::{Error, Result};
use crate::tensor::{spmm, DenseMatrix, LinearOperatorMt};

/// `σ(W · Z_prev · A + V · X)`.
pub fn layer_step(
    w: &DenseMatrix,
    z_prev: &DenseMatrix,
    a: &crate::tensor::SparseMatrix,
    v: &DenseMatrix,
    x: &DenseMatrix,
    activation: Activation,
) -> Result<DenseMatrix> {
    Ok(preactivation(w, z_prev, a, v, x)?.map(|p| activation.apply(p)))
}

/// `W · Z_prev · A + V · X`.
pub fn preactivation(
    w: &DenseMatrix,
    z_prev: &DenseMatrix,
    a: &crate::tensor::SparseMatrix,
    v: &DenseMatrix,
    x: &DenseMatrix,
) -> Result<DenseMatrix> {
    let op = LinearOperatorMt::new(w, a)?;
    let mut p = op.apply(z_prev)?;
    let vx = v.matmul(x)?;
    if vx.shape() != p.shape() {
        return Err(Error::dims(
            "layer_step",
            format!("V·X is {:?} but W·Z·A is {:?}", vx.shape(), p.shape()),
        ));
    }
    p.axpy(1.0, &vx);
    Ok(p)
}

fn check_blocks(params: &IdgnnParams, graph: &DynamicGraph, zs: &[DenseMatrix]) -> Result<()> {
    params.check_graph(graph.num_snapshots(), graph.feature_dim())?;
    let shape = (params.hidden_dim(), graph.num_nodes());
    if zs.len() != graph.num_snapshots() || zs.iter().any(|z| z.shape() != shape) {
        return Err(Error::dims(
            "coupled_sweep",
            format!(
                "expected {} blocks of shape {shape:?}",
                graph.num_snapshots()
            ),
        ));
    }
    Ok(())
}

/// Pre-activations `P^t = W^t Z^{τ(t)} A^t + V X^t` for every snapshot.
pub fn coupled_preactivations(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    zs: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    check_blocks(params, graph, zs)?;
    let big_t = graph.num_snapshots();
    (0..big_t)
        .map(|t| {
            let s = graph.snapshot(t);
            preactivation(
                params.w_for(t),
                &zs[prev_snapshot(t, big_t)],
                &s.adjacency,
                params.v_for(t),
                &s.features,
            )
        })
        .collect()
}

/// One simultaneous update of every block: `Z^t ← σ(W^t Z^{τ(t)} A^t + V X^t)`,
/// all reading the incoming `zs`.
pub fn coupled_sweep(params: &IdgnnParams, graph: &DynamicGraph, zs: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    let act = params.activation;
    Ok(coupled_preactivations(params, graph, zs)?
        .into_iter()
        .map(|p| p.map(|x| act.apply(x)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Damping `η₁ ∈ (0, 1]`.
    pub damping: f64,
    /// Max-abs residual tolerance.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 1.0,
            tol: 1e-6,
            max_sweeps: 500,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    /// Embedding blocks `Z^1..Z^T`, each `d×n`.
    pub z: Vec<DenseMatrix>,
    /// Damped updates applied.
    pub sweeps: usize,
    /// `max |Φ(Z) − Z|` at the returned `z`.
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

impl FixedPointResult {
    /// The final-snapshot embedding `Z^T`.
    pub fn last(&self) -> &DenseMatrix {
        self.z.last().expect("at least one snapshot")
    }
}

fn block_residual(a: &[DenseMatrix], b: &[DenseMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

/// Runs damped fixed-point iteration and reports the outcome without failing
/// on non-convergence.
pub fn fixed_point_iterate(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    cfg: &FixedPointConfig,
    init: Option<&[DenseMatrix]>,
) -> Result<FixedPointResult> {
    cfg.validate()?;
    let shape = (params.hidden_dim(), graph.num_nodes());
    let mut z: Vec<DenseMatrix> = match init {
        Some(z0) => z0.to_vec(),
        None => vec![DenseMatrix::zeros(shape.0, shape.1); graph.num_snapshots()],
    };
    let mut history = Vec::new();
    let mut sweeps = 0;
    loop {
        let next = coupled_sweep(params, graph, &z)?;
        let residual = block_residual(&next, &z);
        history.push(residual);
        if !residual.is_finite() {
            return Err(Error::NoConvergence {
                what: "fixed-point iteration",
                iterations: sweeps,
                residual,
                history,
            });
        }
        if residual <= cfg.tol || sweeps >= cfg.max_sweeps {
            return Ok(FixedPointResult {
                z,
                sweeps,
                residual,
                converged: residual <= cfg.tol,
                history,
            });
        }
        if cfg.damping == 1.0 {
            z = next;
        } else {
            for (zt, nt) in z.iter_mut().zip(&next) {
                zt.scale(1.0 - cfg.damping);
                zt.axpy(cfg.damping, nt);
            }
        }
        sweeps += 1;
    }
}

/// Damped fixed-point iteration `Z ← (1−η₁)Z + η₁·Φ(Z)` until the max-abs
/// residual `‖Φ(Z) − Z‖` is within tolerance.
pub fn fixed_point_solve(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    cfg: &FixedPointConfig,
    init: Option<&[DenseMatrix]>,
) -> Result<FixedPointResult> {
    let res = fixed_point_iterate(params, graph, cfg, init)?;
    if res.converged {
        Ok(res)
    } else {
        Err(Error::NoConvergence {
            what: "fixed-point iteration",
            iterations: res.sweeps,
            residual: res.residual,
            history: res.history,
        })
    }
}

/// Intermediates of one pass through the composed map φ.
#[derive(Debug, Clone)]
pub struct PhiTape {
    /// `y_{t-1}`: the block fed into layer `t` (`inputs[0]` is `z`).
    pub inputs: Vec<DenseMatrix>,
    /// Pre-activations of each layer.
    pub preacts: Vec<DenseMatrix>,
    /// `φ(z) = y_T`.
    pub output: DenseMatrix,
}

/// φ(z) = σ(M^T ⋯ σ(M^1 z + vec(V X^1)) ⋯ + vec(V X^T)) on the matrix form of `z`,
/// keeping the intermediates.
pub fn phi_tape(params: &IdgnnParams, graph: &DynamicGraph, z: &DenseMatrix) -> Result<PhiTape> {
    params.check_graph(graph.num_snapshots(), graph.feature_dim())?;
    if z.shape() != (params.hidden_dim(), graph.num_nodes()) {
        return Err(Error::dims(
            "phi_composed",
            format!(
                "z is {:?}, expected {:?}",
                z.shape(),
                (params.hidden_dim(), graph.num_nodes())
            ),
        ));
    }
    let act = params.activation;
    let big_t = graph.num_snapshots();
    let mut inputs = Vec::with_capacity(big_t);
    let mut preacts = Vec::with_capacity(big_t);
    let mut y = z.clone();
    for t in 0..big_t {
        let s = graph.snapshot(t);
        let p = preactivation(params.w_for(t), &y, &s.adjacency, params.v_for(t), &s.features)?;
        inputs.push(y);
        y = p.map(|x| act.apply(x));
        preacts.push(p);
    }
    Ok(PhiTape {
        inputs,
        preacts,
        output: y,
    })
}

pub fn phi(params: &IdgnnParams, graph: &DynamicGraph, z: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(phi_tape(params, graph, z)?.output)
}

/// φ on the column-wise vectorization of `Z^T` (length `d·n`).
pub fn phi_composed(z: &[f64], params: &IdgnnParams, graph: &DynamicGraph) -> Result<Vec<f64>> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("phi_composed input".into()));
    }
    let zm = DenseMatrix::from_col_vec(params.hidden_dim(), graph.num_nodes(), z)?;
    Ok(phi(params, graph, &zm)?.to_col_vec())
}

/// The "w/o loop" variant: one sequential pass through the snapshots from `Z = 0`,
/// i.e. the intermediates of `φ(0)`. The embedding of snapshot `t` is
/// `inputs[t + 1]` (and `output` for the last one).
pub fn no_loop_forward(params: &IdgnnParams, graph: &DynamicGraph) -> Result<PhiTape> {
    phi_tape(
        params,
        graph,
        &DenseMatrix::zeros(params.hidden_dim(), graph.num_nodes()),
    )
}

/// Max-abs fixed-point residual `‖z − φ(z)‖_∞` of a final-snapshot block.
pub fn phi_residual(params: &IdgnnParams, graph: &DynamicGraph, z: &DenseMatrix) -> Result<f64> {
    Ok(phi(params, graph, z)?.max_abs_diff(z))
}

/// `σ'` of the coupled pre-activations at `zs`: the `Σ^t` matrices.
pub fn activation_derivatives(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    zs: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    let act = params.activation;
    Ok(coupled_preactivations(params, graph, zs)?
        .into_iter()
        .map(|p| p.map(|x| act.derivative(x)))
        .collect())
}

/// `Z^{τ(t)} A^t` for each snapshot, the transpose of the `H^t` source matrices.
pub fn propagated_inputs(graph: &DynamicGraph, zs: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    let big_t = graph.num_snapshots();
    (0..big_t)
        .map(|t| spmm(&zs[prev_snapshot(t, big_t)], &graph.snapshot(t).adjacency))
        .collect()
}
