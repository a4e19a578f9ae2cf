use serde::{Deserialize, Serialize};

use super::params::IdgnnParams;
use crate::data::DynamicGraph;
use crate::error::{Error, Result};
use crate::tensor::{infinity_norm, operator_norm, project_linf_ball, OPNORM_MAX_ITER, OPNORM_TOL};

/// Default contraction margin κ.
pub const DEFAULT_KAPPA: f64 = 0.95;

/// Largest adjacency operator norm per snapshot over a set of graphs.
pub fn critical_norms(graphs: &[&DynamicGraph]) -> Result<Vec<f64>> {
    let big_t = graphs.first().map_or(0, |g| g.num_snapshots());
    let mut norms = vec![0.0f64; big_t];
    for (g, graph) in graphs.iter().enumerate() {
        if graph.num_snapshots() != big_t {
            return Err(Error::dims(
                "critical_norms",
                format!("graph {g} has {} snapshots, expected {big_t}", graph.num_snapshots()),
            ));
        }
        for (t, s) in graph.snapshots().iter().enumerate() {
            let norm = operator_norm(&s.adjacency, OPNORM_TOL, OPNORM_MAX_ITER).map_err(|e| e.in_graph(g))?;
            norms[t] = norms[t].max(norm);
        }
    }
    Ok(norms)
}

/// Projection radii `κ / max_i ‖A^t_i‖_op` for each snapshot; `None` where every
/// adjacency is zero and no constraint applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub kappa: f64,
    pub norms: Vec<f64>,
    pub radii: Vec<Option<f64>>,
}

impl WellPosedness {
    pub fn from_graphs(graphs: &[&DynamicGraph], kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidArgument(format!("κ must lie in (0, 1), got {kappa}")));
        }
        let norms = critical_norms(graphs)?;
        let radii = norms
            .iter()
            .map(|&norm| (norm > 0.0).then(|| kappa / norm))
            .collect();
        Ok(WellPosedness { kappa, norms, radii })
    }

    /// Radius for weight slot `slot` of `params`: a shared `W` must satisfy
    /// every snapshot's constraint, so it takes the smallest radius.
    pub fn slot_radius(&self, params: &IdgnnParams, slot: usize) -> Option<f64> {
        if params.w.len() == 1 {
            self.radii.iter().flatten().copied().reduce(f64::min)
        } else {
            self.radii[slot]
        }
    }

    /// Projects every `W` slot onto its ∞-norm ball in place.
    pub fn project(&self, params: &mut IdgnnParams) -> Result<()> {
        if params.num_snapshots != self.radii.len() {
            return Err(Error::dims(
                "enforce_wellposedness",
                format!(
                    "parameters for {} snapshots, radii for {}",
                    params.num_snapshots,
                    self.radii.len()
                ),
            ));
        }
        for slot in 0..params.w.len() {
            match self.slot_radius(params, slot) {
                Some(r) => params.w[slot] = project_linf_ball(&params.w[slot], r)?,
                None => log::warn!("all adjacency matrices of snapshot {slot} are zero; W left unprojected"),
            }
        }
        Ok(())
    }

    /// True when every `W` slot lies within its radius (up to `slack`).
    pub fn is_feasible(&self, params: &IdgnnParams, slack: f64) -> bool {
        (0..params.w.len()).all(|slot| {
            self.slot_radius(params, slot)
                .is_none_or(|r| infinity_norm(&params.w[slot]) <= r + slack)
        })
    }
}

/// Projects `W^t` so that `‖W^t‖_∞ ≤ κ / max_i ‖A^t_i‖_op` over the given graphs.
pub fn enforce_wellposedness(params: &IdgnnParams, graphs: &[&DynamicGraph], kappa: f64) -> Result<IdgnnParams> {
    let wp = WellPosedness::from_graphs(graphs, kappa)?;
    let mut out = params.clone();
    wp.project(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `‖W^t‖_∞ · ‖A^t‖_op` per snapshot.
    pub products: Vec<f64>,
    pub pass: bool,
}

impl ContractionReport {
    /// Largest product, the contraction factor bound.
    pub fn factor(&self) -> f64 {
        self.products.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks the sufficient well-posedness condition `‖W^t‖_∞ ‖A^t‖_op < 1` for all `t`.
pub fn contraction_check(params: &IdgnnParams, graph: &DynamicGraph) -> Result<ContractionReport> {
    params.check_graph(graph.num_snapshots(), graph.feature_dim())?;
    let products = graph
        .snapshots()
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let a = operator_norm(&s.adjacency, OPNORM_TOL, OPNORM_MAX_ITER)?;
            Ok(infinity_norm(params.w_for(t)) * a)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pass = products.iter().all(|&p| p < 1.0);
    Ok(ContractionReport { products, pass })
}
