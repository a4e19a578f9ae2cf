//! Gradients through the fixed point: an adjoint solve for training, forward
//! sensitivities as a reference, and reverse passes through the composed map.

mod sensitivity;
mod sgd;

pub use sensitivity::{
    forward_mode_grads, forward_sensitivity, forward_sensitivity_v, forward_sensitivity_w, sensitivity_jacobian,
    ParamSlot, SensitivityWorkspace,
};
pub use sgd::{no_loop_train_step, sgd_train_step, GradMode, SgdConfig, SgdState, StepStats};

use crate::data::{prev_snapshot, DynamicGraph};
use crate::error::{Error, Result};
use crate::model::{
    activation_derivatives, propagated_inputs, FixedPointConfig, FixedPointResult, IdgnnParams, ParamGradients,
    PhiTape,
};
use crate::tensor::{gemm, DenseMatrix, LinearOperatorMt};

/// `Jᵀu` for the Jacobian `J` of the coupled sweep: block `τ(t)` receives
/// `W^tᵀ (Σ^t ⊙ u^t) A^tᵀ`.
fn jacobian_transpose_apply(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    sigma: &[DenseMatrix],
    u: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>> {
    let big_t = graph.num_snapshots();
    let mut out: Vec<DenseMatrix> = u.iter().map(|b| DenseMatrix::zeros(b.rows(), b.cols())).collect();
    for t in 0..big_t {
        let r = sigma[t].hadamard(&u[t]);
        let op = LinearOperatorMt::new(params.w_for(t), &graph.snapshot(t).adjacency)?;
        out[prev_snapshot(t, big_t)].axpy(1.0, &op.apply_transpose(&r)?);
    }
    Ok(out)
}

/// Solves `u = s + Jᵀu` by fixed-point iteration, where `s` holds `dZ_T` in
/// the last block and `J` is the Jacobian of the coupled sweep at the fixed point.
pub fn adjoint_solve(
    fixed_point: &FixedPointResult,
    params: &IdgnnParams,
    graph: &DynamicGraph,
    dz_t: &DenseMatrix,
    cfg: &FixedPointConfig,
    init: Option<&[DenseMatrix]>,
) -> Result<Vec<DenseMatrix>> {
    let big_t = graph.num_snapshots();
    let shape = fixed_point.last().shape();
    if dz_t.shape() != shape {
        return Err(Error::dims(
            "adjoint_solve",
            format!("dZ_T is {:?}, embeddings are {shape:?}", dz_t.shape()),
        ));
    }
    let sigma = activation_derivatives(params, graph, &fixed_point.z)?;
    let mut u: Vec<DenseMatrix> = match init {
        Some(u0) => u0.to_vec(),
        None => vec![DenseMatrix::zeros(shape.0, shape.1); big_t],
    };
    let mut history = Vec::new();
    for _ in 0..=cfg.max_sweeps {
        let mut next = jacobian_transpose_apply(params, graph, &sigma, &u)?;
        next[big_t - 1].axpy(1.0, dz_t);
        let change = next
            .iter()
            .zip(&u)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        history.push(change);
        u = next;
        if change <= cfg.tol {
            return Ok(u);
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "adjoint solve",
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Parameter gradients `dW^{slot(t)} += R^t (Z^{τ(t)} A^t)ᵀ`, `dV^{slot(t)} += R^t X^tᵀ`
/// with `R^t = Σ^t ⊙ u^t`. The head part is left zero.
pub fn param_grads_from_adjoint(
    u: &[DenseMatrix],
    fixed_point: &FixedPointResult,
    params: &IdgnnParams,
    graph: &DynamicGraph,
) -> Result<ParamGradients> {
    if u.len() != graph.num_snapshots() || u.iter().zip(&fixed_point.z).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::dims("param_grads_from_adjoint", "adjoint blocks do not match the fixed point".to_string()));
    }
    let sigma = activation_derivatives(params, graph, &fixed_point.z)?;
    let h = propagated_inputs(graph, &fixed_point.z)?;
    let mut grads = ParamGradients::zeros_like(params);
    for t in 0..graph.num_snapshots() {
        let r = sigma[t].hadamard(&u[t]);
        gemm(1.0, &r, false, &h[t], true, 1.0, &mut grads.w[params.w_slot(t)]);
        gemm(1.0, &r, false, &graph.snapshot(t).features, true, 1.0, &mut grads.v[params.v_slot(t)]);
    }
    Ok(grads)
}

/// Reverse pass through a recorded pass of φ: given `∂L/∂φ(z)`, returns
/// `∂L/∂z` and accumulates the `W`/`V` gradients into `grads`. Also returns the
/// per-layer `R_t = σ'(P_t) ⊙ G_t`.
pub fn tape_backward(
    params: &IdgnnParams,
    graph: &DynamicGraph,
    tape: &PhiTape,
    g_out: &DenseMatrix,
    grads: &mut ParamGradients,
) -> Result<(DenseMatrix, Vec<DenseMatrix>)> {
    let act = params.activation;
    let big_t = graph.num_snapshots();
    let mut g = g_out.clone();
    let mut rs = vec![DenseMatrix::zeros(0, 0); big_t];
    for t in (0..big_t).rev() {
        let s = graph.snapshot(t);
        let r = tape.preacts[t].map(|p| act.derivative(p)).hadamard(&g);
        let ya = crate::tensor::spmm(&tape.inputs[t], &s.adjacency)?;
        gemm(1.0, &r, false, &ya, true, 1.0, &mut grads.w[params.w_slot(t)]);
        gemm(1.0, &r, false, &s.features, true, 1.0, &mut grads.v[params.v_slot(t)]);
        g = LinearOperatorMt::new(params.w_for(t), &s.adjacency)?.apply_transpose(&r)?;
        rs[t] = r;
    }
    Ok((g, rs))
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
    fn adjoint_trivial_cases() {
        let (params, graph) = random_instance(4, 3, 2, 3, WeightSharing::ShareV, Activation::Relu, 5);
        let fp = fixed_point_solve(&params, &graph, &tight(), None).unwrap();
        let zero = DenseMatrix::zeros(3, 4);
        let u = adjoint_solve(&fp, &params, &graph, &zero, &tight(), None).unwrap();
        assert!(u.iter().all(|b| b.max_abs() == 0.0));
        let grads = param_grads_from_adjoint(&u, &fp, &params, &graph).unwrap();
        assert_eq!(grads.max_abs(), 0.0);

        let mut p0 = params.clone();
        p0.w.iter_mut().for_each(|w| w.scale(0.0));
        let fp0 = fixed_point_solve(&p0, &graph, &tight(), None).unwrap();
        let dz = DenseMatrix::from_fn(3, 4, |i, j| i as f64 - j as f64);
        let u = adjoint_solve(&fp0, &p0, &graph, &dz, &tight(), None).unwrap();
        assert_eq!(u[2], dz);
        assert!(u[0].max_abs() == 0.0 && u[1].max_abs() == 0.0);
    }

    #[test]
    fn scalar_chain_adjoint() {
        let (params, graph) = scalar_chain();
        let fp = fixed_point_solve(&params, &graph, &tight(), None).unwrap();
        let u = adjoint_solve(&fp, &params, &graph, &DenseMatrix::filled(1, 1, 1.0), &tight(), None).unwrap();
        assert!((u[1][(0, 0)] - 4.0 / 3.0).abs() < 1e-10);
        assert!((u[0][(0, 0)] - 2.0 / 3.0).abs() < 1e-10);
        let grads = param_grads_from_adjoint(&u, &fp, &params, &graph).unwrap();
        // ∂z²/∂w² = 8/3 and ∂z²/∂w¹ = 4/3.
        assert!((grads.w[1][(0, 0)] - 8.0 / 3.0).abs() < 1e-9);
        assert!((grads.w[0][(0, 0)] - 4.0 / 3.0).abs() < 1e-9);
        // ∂z²/∂v¹ = 2/3, ∂z²/∂v² = 4/3.
        assert!((grads.v[0][(0, 0)] - 2.0 / 3.0).abs() < 1e-9);
        assert!((grads.v[1][(0, 0)] - 4.0 / 3.0).abs() < 1e-9);
    }
}
