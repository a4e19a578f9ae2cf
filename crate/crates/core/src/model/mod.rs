//! The implicit model: layer map, coupled sweep, composed map φ, fixed-point
//! solver, well-posedness projection and prediction head.

mod head;
mod params;
mod solve;
mod wellposed;

pub use head::predict_head;
pub use params::{
    Activation, Head, IdgnnParams, ModelShape, ParamBlocks, ParamGradients, WeightSharing,
};
pub use solve::{
    activation_derivatives, coupled_preactivations, coupled_sweep, fixed_point_iterate, fixed_point_solve,
    layer_step, no_loop_forward, phi, phi_composed, phi_residual, phi_tape, preactivation, propagated_inputs,
    FixedPointConfig, FixedPointResult, PhiTape,
};
pub use wellposed::{
    contraction_check, critical_norms, enforce_wellposedness, ContractionReport, WellPosedness, DEFAULT_KAPPA,
};
