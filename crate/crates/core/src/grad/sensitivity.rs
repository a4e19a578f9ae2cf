//! Forward sensitivities `∂Z^t/∂q` for every entry `q` of one weight slot,
//! solved jointly over all snapshots.
//!
//! The sensitivities of a slot with `Q` entries are kept in one `d × (Q·n)`
//! buffer per snapshot, column block `q` holding `∂Z^t/∂q`. Read row-major as a
//! `(d·Q) × n` matrix the same buffer stacks the blocks as `[row i][q]`, so both
//! `W · S_q` and `S_q · A` for all `q` are single matrix products. The adjacency
//! is multiplied densely, which is what makes this path quadratic in `n`.

use crate::data::{prev_snapshot, DynamicGraph};
use crate::error::{Error, Result};
use crate::model::{activation_derivatives, propagated_inputs, FixedPointConfig, FixedPointResult, IdgnnParams, ParamGradients};
use crate::tensor::{gemm, DenseMatrix};

/// Which parameter block to differentiate with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    W(usize),
    V(usize),
}

/// Quantities at the fixed point shared by all sensitivity systems.
#[derive(Debug, Clone)]
pub struct SensitivityWorkspace {
    /// `σ'(P^t)`, shaped like `Z^t`.
    pub sigma: Vec<DenseMatrix>,
    /// `Z^{τ(t)} A^t` (the transpose of `H^t`).
    pub propagated: Vec<DenseMatrix>,
    /// Dense copies of the adjacency matrices.
    pub adjacency: Vec<DenseMatrix>,
}

impl SensitivityWorkspace {
    pub fn new(fixed_point: &FixedPointResult, params: &IdgnnParams, graph: &DynamicGraph) -> Result<Self> {
        Ok(SensitivityWorkspace {
            sigma: activation_derivatives(params, graph, &fixed_point.z)?,
            propagated: propagated_inputs(graph, &fixed_point.z)?,
            adjacency: graph.snapshots().iter().map(|s| s.adjacency.to_dense()).collect(),
        })
    }
}

/// Number of scalar entries in a slot and its column count.
fn slot_dims(params: &IdgnnParams, slot: ParamSlot) -> Result<(usize, usize)> {
    let d = params.hidden_dim();
    match slot {
        ParamSlot::W(a) if a < params.w.len() => Ok((d * d, d)),
        ParamSlot::V(a) if a < params.v.len() => Ok((d * params.feature_dim(), params.feature_dim())),
        _ => Err(Error::InvalidArgument(format!("no parameter slot {slot:?}"))),
    }
}

/// Adds the direct source term of snapshot `t` for every entry `q = b·cols + c`
/// of the slot: row `b` of block `q` receives row `c` of the source matrix.
fn add_source(buf: &mut DenseMatrix, source: &DenseMatrix, cols: usize, n: usize) {
    let d = buf.rows();
    for b in 0..d {
        let row = buf.row_mut(b);
        for c in 0..cols {
            let q = b * cols + c;
            row[q * n..(q + 1) * n]
                .iter_mut()
                .zip(source.row(c))
                .for_each(|(x, s)| *x += s);
        }
    }
}

/// Solves `S^t = Σ^t ⊙ (δ·Src^t + W^t S^{τ(t)} A^t)` for all snapshots by
/// fixed-point iteration. Block `t` of the result is `d × (Q·n)` with column
/// block `q` equal to `∂Z^t/∂q` (entries `q` of the slot in row-major order).
pub fn forward_sensitivity(
    ws: &SensitivityWorkspace,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    slot: ParamSlot,
    cfg: &FixedPointConfig,
) -> Result<Vec<DenseMatrix>> {
    let (q_count, cols) = slot_dims(params, slot)?;
    let big_t = graph.num_snapshots();
    let d = params.hidden_dim();
    let n = graph.num_nodes();
    let uses_slot = |t: usize| match slot {
        ParamSlot::W(a) => params.w_slot(t) == a,
        ParamSlot::V(a) => params.v_slot(t) == a,
    };
    let source = |t: usize| match slot {
        ParamSlot::W(_) => &ws.propagated[t],
        ParamSlot::V(_) => &graph.snapshot(t).features,
    };
    let mut s = vec![DenseMatrix::zeros(d, q_count * n); big_t];
    let mut next = s.clone();
    let mut sa = DenseMatrix::zeros(d * q_count, n);
    let mut history = Vec::new();
    for _ in 0..=cfg.max_sweeps {
        let mut change = 0.0f64;
        for t in 0..big_t {
            // S^{τ(t)} · A^t for every q at once on the (d·Q) × n view.
            let p = prev_snapshot(t, big_t);
            let prev = std::mem::replace(&mut s[p], DenseMatrix::zeros(0, 0)).reshape(d * q_count, n)?;
            sa = sa.reshape(d * q_count, n)?;
            gemm(1.0, &prev, false, &ws.adjacency[t], false, 0.0, &mut sa);
            s[p] = prev.reshape(d, q_count * n)?;
            sa = sa.reshape(d, q_count * n)?;
            let block = &mut next[t];
            gemm(1.0, params.w_for(t), false, &sa, false, 0.0, block);
            if uses_slot(t) {
                add_source(block, source(t), cols, n);
            }
            let sigma = &ws.sigma[t];
            for i in 0..d {
                let sig = sigma.row(i);
                let old = s[t].row(i);
                for (chunk, old) in block.row_mut(i).chunks_exact_mut(n).zip(old.chunks_exact(n)) {
                    // lane-wise maxima keep this loop vectorizable; the sum
                    // catches NaN, which the comparisons would skip
                    let mut lanes = [0.0f64; 4];
                    let mut guard = 0.0;
                    for (k, ((x, g), o)) in chunk.iter_mut().zip(sig).zip(old).enumerate() {
                        *x *= g;
                        let diff = (*x - o).abs();
                        guard += diff;
                        let lane = &mut lanes[k % 4];
                        *lane = if diff <= *lane { *lane } else { diff };
                    }
                    if !guard.is_finite() {
                        change = f64::NAN;
                    }
                    change = lanes.iter().fold(change, |m, &v| if m.is_nan() || v <= m { m } else { v });
                }
            }
        }
        std::mem::swap(&mut s, &mut next);
        history.push(change);
        if change <= cfg.tol {
            return Ok(s);
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "forward sensitivity",
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Rearranges the final-snapshot block into the `(d·n) × Q` Jacobian of the
/// column-wise `vec(Z^T)`.
pub fn sensitivity_jacobian(block: &DenseMatrix, n: usize) -> DenseMatrix {
    let d = block.rows();
    let q_count = block.cols() / n;
    DenseMatrix::from_fn(d * n, q_count, |row, q| block[(row % d, q * n + row / d)])
}

/// `∂vec(Z^T)/∂vec(W^a)` as a `(d·n) × d²` matrix.
pub fn forward_sensitivity_w(
    a: usize,
    fixed_point: &FixedPointResult,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    cfg: &FixedPointConfig,
) -> Result<DenseMatrix> {
    let ws = SensitivityWorkspace::new(fixed_point, params, graph)?;
    let s = forward_sensitivity(&ws, params, graph, ParamSlot::W(a), cfg)?;
    Ok(sensitivity_jacobian(s.last().expect("T ≥ 1"), graph.num_nodes()))
}

/// `∂vec(Z^T)/∂vec(V)` as a `(d·n) × d·l` matrix for the shared input map
/// (slot 0 when `V` is per snapshot).
pub fn forward_sensitivity_v(
    fixed_point: &FixedPointResult,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    cfg: &FixedPointConfig,
) -> Result<DenseMatrix> {
    let ws = SensitivityWorkspace::new(fixed_point, params, graph)?;
    let s = forward_sensitivity(&ws, params, graph, ParamSlot::V(0), cfg)?;
    Ok(sensitivity_jacobian(s.last().expect("T ≥ 1"), graph.num_nodes()))
}

/// Loss gradients for every `W` and `V` slot by contracting `dZ_T` with the
/// forward sensitivities. The head part is left zero.
pub fn forward_mode_grads(
    fixed_point: &FixedPointResult,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    dz_t: &DenseMatrix,
    cfg: &FixedPointConfig,
) -> Result<ParamGradients> {
    let ws = SensitivityWorkspace::new(fixed_point, params, graph)?;
    let n = graph.num_nodes();
    let mut grads = ParamGradients::zeros_like(params);
    let contract = |block: &DenseMatrix, out: &mut DenseMatrix| {
        for (q, g) in out.as_mut_slice().iter_mut().enumerate() {
            *g = (0..block.rows())
                .map(|i| {
                    block.row(i)[q * n..(q + 1) * n]
                        .iter()
                        .zip(dz_t.row(i))
                        .map(|(s, dz)| s * dz)
                        .sum::<f64>()
                })
                .sum();
        }
    };
    for a in 0..params.w.len() {
        let s = forward_sensitivity(&ws, params, graph, ParamSlot::W(a), cfg)?;
        contract(s.last().expect("T ≥ 1"), &mut grads.w[a]);
    }
    for a in 0..params.v.len() {
        let s = forward_sensitivity(&ws, params, graph, ParamSlot::V(a), cfg)?;
        contract(s.last().expect("T ≥ 1"), &mut grads.v[a]);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{fixed_point_solve, Activation, WeightSharing};

    fn tight() -> FixedPointConfig {
        FixedPointConfig {
            tol: 1e-12,
            ..FixedPointConfig::default()
        }
    }

    #[test]
    fn scalar_chain_sensitivities() {
        let (params, graph) = scalar_chain();
        let fp = fixed_point_solve(&params, &graph, &tight(), None).unwrap();
        let dw2 = forward_sensitivity_w(1, &fp, &params, &graph, &tight()).unwrap();
        assert!((dw2[(0, 0)] - 8.0 / 3.0).abs() < 1e-10);
        let dw1 = forward_sensitivity_w(0, &fp, &params, &graph, &tight()).unwrap();
        assert!((dw1[(0, 0)] - 4.0 / 3.0).abs() < 1e-10);
        // ∂z²/∂v¹ = w²/(1 − w¹w²) = 2/3.
        let dv1 = forward_sensitivity_v(&fp, &params, &graph, &tight()).unwrap();
        assert!((dv1[(0, 0)] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn zero_weights_keep_only_the_direct_term() {
        let (mut params, graph) = random_instance(4, 2, 3, 3, WeightSharing::ShareV, Activation::Tanh, 9);
        params.w.iter_mut().for_each(|w| w.scale(0.0));
        let fp = fixed_point_solve(&params, &graph, &tight(), None).unwrap();
        let ws = SensitivityWorkspace::new(&fp, &params, &graph).unwrap();
        // Only the block using W¹ sees a source; Z^{τ(2)} A^2 = Z^1 A^2 feeds it.
        let s = forward_sensitivity(&ws, &params, &graph, ParamSlot::W(1), &tight()).unwrap();
        assert_eq!(s[0].max_abs(), 0.0);
        assert_eq!(s[2].max_abs(), 0.0);
        let (d, n) = (2, 4);
        for b in 0..d {
            for c in 0..d {
                let q = b * d + c;
                for i in 0..d {
                    for j in 0..n {
                        let expect = if i == b { ws.sigma[1][(i, j)] * ws.propagated[1][(c, j)] } else { 0.0 };
                        assert!((s[1][(i, q * n + j)] - expect).abs() < 1e-15);
                    }
                }
            }
        }
        // V: the final block is Σ^T ⊙ ((X^T)ᵀ ⊗ I).
        let jv = forward_sensitivity_v(&fp, &params, &graph, &tight()).unwrap();
        let x = &graph.snapshot(2).features;
        for row in 0..d * n {
            let (i, j) = (row % d, row / d);
            for b in 0..d {
                for c in 0..3 {
                    let expect = if i == b { ws.sigma[2][(i, j)] * x[(c, j)] } else { 0.0 };
                    assert!((jv[(row, b * 3 + c)] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn forward_and_adjoint_gradients_agree() {
        for sharing in [WeightSharing::ShareV, WeightSharing::ShareBoth, WeightSharing::NotShare] {
            let (params, graph) = random_instance(5, 3, 2, 3, sharing, Activation::Tanh, 21);
            let fp = fixed_point_solve(&params, &graph, &tight(), None).unwrap();
            let dz = DenseMatrix::from_fn(3, 5, |i, j| ((i * 5 + j) % 4) as f64 - 1.5);
            let fwd = forward_mode_grads(&fp, &params, &graph, &dz, &tight()).unwrap();
            let u = super::super::adjoint_solve(&fp, &params, &graph, &dz, &tight(), None).unwrap();
            let adj = super::super::param_grads_from_adjoint(&u, &fp, &params, &graph).unwrap();
            let mut diff = fwd.clone();
            diff.axpy(-1.0, &adj);
            assert!(diff.max_abs() < 1e-9 * (1.0 + adj.max_abs()), "{sharing:?}");
        }
    }
}
