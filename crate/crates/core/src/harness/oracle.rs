use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, Dataset, DynamicGraph, SyntheticSpec};
use crate::error::Result;
use crate::grad::{adjoint_solve, forward_mode_grads, param_grads_from_adjoint};
use crate::metrics::loss_and_grad_z;
use crate::model::{
    coupled_preactivations, fixed_point_solve, Activation, FixedPointConfig, IdgnnParams, ModelShape, WeightSharing,
    WellPosedness,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[allow(non_snake_case)]
pub struct OracleConfig {
    pub n: usize,
    pub hidden_dim: usize,
    pub T: usize,
    pub l: usize,
    pub activation: Activation,
    pub sharing: WeightSharing,
    pub kappa: f64,
    /// Central-difference step.
    pub fd_step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n: 5,
            hidden_dim: 4,
            T: 3,
            l: 3,
            activation: Activation::Tanh,
            sharing: WeightSharing::ShareV,
            kappa: 0.9,
            fd_step: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Pairwise errors between the three gradient paths, each measured as
/// `max_i |a_i − b_i| / max(‖a‖_∞, ‖b‖_∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub forward_vs_adjoint: f64,
    pub forward_vs_fd: f64,
    pub adjoint_vs_fd: f64,
    /// Smallest `|P|` over all pre-activations at the fixed point.
    pub kink_margin: f64,
    /// No pre-activation lies close enough to a kink for the finite differences to cross it.
    pub kink_free: bool,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn max_error(&self) -> f64 {
        self.forward_vs_adjoint.max(self.forward_vs_fd).max(self.adjoint_vs_fd)
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// A random instance: one synthetic dynamic graph and projected parameters.
pub fn oracle_instance(cfg: &OracleConfig) -> Result<(Dataset, IdgnnParams)> {
    let ds = gen_synthetic(&SyntheticSpec {
        n: cfg.n,
        T: cfg.T,
        l: cfg.l,
        avg_degree: 2.0,
        num_classes: 2,
        N: 1,
        seed: cfg.seed,
    })?;
    let shape = ModelShape {
        hidden_dim: cfg.hidden_dim,
        feature_dim: cfg.l,
        output_dim: 2,
        num_snapshots: cfg.T,
        activation: cfg.activation,
        sharing: cfg.sharing,
    };
    let graphs: Vec<&DynamicGraph> = ds.graphs.iter().collect();
    let mut params = IdgnnParams::init(&shape, cfg.seed.wrapping_add(7));
    // larger weights than the default init so the layer maps matter
    params.w.iter_mut().for_each(|w| w.scale(4.0));
    WellPosedness::from_graphs(&graphs, cfg.kappa)?.project(&mut params)?;
    Ok((ds, params))
}

/// Compares the forward-sensitivity, adjoint and finite-difference gradients of
/// the training loss with respect to `W` and `V` on one random instance.
pub fn oracle_check(cfg: &OracleConfig) -> Result<OracleReport> {
    let (ds, params) = oracle_instance(cfg)?;
    let graph = &ds.graphs[0];
    let mask = vec![true; graph.num_nodes()];
    let solve_cfg = FixedPointConfig {
        tol: 1e-14,
        max_sweeps: 20_000,
        ..FixedPointConfig::default()
    };
    let loss_at = |p: &IdgnnParams| -> Result<f64> {
        let fp = fixed_point_solve(p, graph, &solve_cfg, None)?;
        Ok(loss_and_grad_z(&p.head, fp.last(), graph.labels(), &mask, &ds.task)?.loss)
    };

    let fp = fixed_point_solve(&params, graph, &solve_cfg, None)?;
    let lg = loss_and_grad_z(&params.head, fp.last(), graph.labels(), &mask, &ds.task)?;
    let forward = forward_mode_grads(&fp, &params, graph, &lg.dz, &solve_cfg)?.omega_to_vec();
    let u = adjoint_solve(&fp, &params, graph, &lg.dz, &solve_cfg, None)?;
    let adjoint = param_grads_from_adjoint(&u, &fp, &params, graph)?.omega_to_vec();

    let base = params.omega_to_vec();
    let h = cfg.fd_step;
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + h;
        let mut plus = params.clone();
        plus.set_omega_from_vec(&shifted);
        shifted[i] = base[i] - h;
        let mut minus = params.clone();
        minus.set_omega_from_vec(&shifted);
        fd.push((loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h));
    }

    let kink_margin = coupled_preactivations(&params, graph, &fp.z)?
        .iter()
        .flat_map(|p| p.as_slice().iter().map(|x| x.abs()).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    let kink_free = match cfg.activation {
        Activation::Relu => kink_margin > 1e3 * h,
        _ => true,
    };
    let forward_vs_adjoint = relative_error(&forward, &adjoint);
    let forward_vs_fd = relative_error(&forward, &fd);
    let adjoint_vs_fd = relative_error(&adjoint, &fd);
    let worst = forward_vs_adjoint.max(forward_vs_fd).max(adjoint_vs_fd);
    Ok(OracleReport {
        forward_vs_adjoint,
        forward_vs_fd,
        adjoint_vs_fd,
        kink_margin,
        kink_free,
        tolerance: cfg.tolerance,
        pass: kink_free && worst < cfg.tolerance,
    })
}
