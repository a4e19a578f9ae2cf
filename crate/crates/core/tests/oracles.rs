mod common;

use common::*;
use idgnn::bilevel::{grad_omega_g, grad_z_g, lower_g};
use idgnn::grad::{adjoint_solve, forward_mode_grads, param_grads_from_adjoint};
use idgnn::metrics::{dirichlet_energy, loss_and_grad_z};
use idgnn::model::{
    coupled_sweep, fixed_point_solve, phi, Activation, FixedPointConfig, IdgnnParams, WeightSharing, WellPosedness,
};
use idgnn::tensor::{
    infinity_norm, kron_apply, operator_norm, project_l1_ball, project_linf_ball, DenseMatrix, LinearOperatorMt,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn act_of(tanh: bool) -> Activation {
    if tanh {
        Activation::Tanh
    } else {
        Activation::Relu
    }
}

fn sharing_of(shared_w: bool) -> WeightSharing {
    if shared_w {
        WeightSharing::ShareBoth
    } else {
        WeightSharing::ShareV
    }
}

/// Projection onto the ℓ1 ball by bisection on the soft threshold.
fn l1_projection_by_bisection(x: &[f64], radius: f64) -> Vec<f64> {
    let soft = |theta: f64| -> Vec<f64> { x.iter().map(|v| v.signum() * (v.abs() - theta).max(0.0)).collect() };
    let l1 = |y: &[f64]| y.iter().map(|v| v.abs()).sum::<f64>();
    if l1(x) <= radius {
        return x.to_vec();
    }
    let (mut lo, mut hi) = (0.0, x.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if l1(&soft(mid)) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    soft(0.5 * (lo + hi))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kronecker_operator_matches_materialized_product(d in 1usize..5, n in 1usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = random_dense(d, d, 1.0, &mut r);
        let a = random_sparse(n, 0.5, &mut r);
        let z = random_dense(d, n, 1.0, &mut r);
        let op = LinearOperatorMt::new(&w, &a).unwrap();
        let k = kron_oracle(&w, &a);
        let expected = &k * DVector::from_vec(z.to_col_vec());
        prop_assert!(rel_err(&kron_apply(&op, &z).unwrap().to_col_vec(), expected.as_slice()) < 1e-12);
        let expected_t = k.transpose() * DVector::from_vec(z.to_col_vec());
        prop_assert!(rel_err(&op.apply_transpose(&z).unwrap().to_col_vec(), expected_t.as_slice()) < 1e-12);
    }

    #[test]
    fn operator_norm_is_largest_singular_value(n in 1usize..12, density in 0.1f64..0.9, seed in any::<u64>()) {
        let a = random_sparse(n, density, &mut rng(seed));
        let dense = sparse_to_na(&a);
        let sigma = dense.singular_values().amax();
        let est = operator_norm(&a, 1e-10, 10_000).unwrap();
        prop_assert!((est - sigma).abs() <= 1e-6 * sigma.max(1.0), "{est} vs {sigma}");
        // the spectral radius never exceeds the operator norm
        prop_assert!(spectral_radius(&dense) <= est * (1.0 + 1e-8) + 1e-12);
    }

    #[test]
    fn linf_projection_matches_rowwise_bisection(rows in 1usize..5, cols in 1usize..8, radius in 0.05f64..3.0, seed in any::<u64>()) {
        let w = random_dense(rows, cols, 2.0, &mut rng(seed));
        let p = project_linf_ball(&w, radius).unwrap();
        prop_assert!(infinity_norm(&p) <= radius + 1e-12);
        for i in 0..rows {
            let expected = l1_projection_by_bisection(w.row(i), radius);
            prop_assert!(rel_err(p.row(i), &expected) < 1e-9);
            prop_assert!(rel_err(&project_l1_ball(w.row(i), radius), &expected) < 1e-9);
        }
        // idempotent up to rounding at the boundary
        prop_assert!(project_linf_ball(&p, radius).unwrap().max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn infinity_norm_is_max_row_sum(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let w = random_dense(rows, cols, 3.0, &mut rng(seed));
        let oracle = to_na(&w).row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        prop_assert!((infinity_norm(&w) - oracle).abs() < 1e-12);
    }

    #[test]
    fn coupled_sweep_matches_block_map(
        d in 1usize..4, n in 1usize..5, big_t in 1usize..4, tanh in any::<bool>(), shared_w in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let graph = random_graph(n, big_t, 2, 2, &mut r);
        let params = random_params(&shape(d, 2, big_t, 2, act_of(tanh), sharing_of(shared_w)), 1.0, &mut r);
        let zs: Vec<DenseMatrix> = (0..big_t).map(|_| random_dense(d, n, 1.0, &mut r)).collect();
        let (m, b) = block_map(&params, &graph);
        let expected = activate(params.activation, &m * stack(&zs) + &b);
        let got = stack(&coupled_sweep(&params, &graph, &zs).unwrap());
        prop_assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn fixed_point_matches_iteration_on_block_map(
        d in 1usize..4, n in 2usize..6, big_t in 1usize..4, tanh in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let graph = random_graph(n, big_t, 2, 2, &mut r);
        let mut params = random_params(&shape(d, 2, big_t, 2, act_of(tanh), WeightSharing::ShareV), 2.0, &mut r);
        WellPosedness::from_graphs(&[&graph], 0.9).unwrap().project(&mut params).unwrap();
        let cfg = FixedPointConfig { tol: 1e-13, max_sweeps: 10_000, ..FixedPointConfig::default() };
        let fp = fixed_point_solve(&params, &graph, &cfg, None).unwrap();
        let oracle = oracle_fixed_point(&params, &graph, 1e-13, 10_000);
        prop_assert!((stack(&fp.z) - &oracle).amax() < 1e-10);
        // the final block is a fixed point of the composed map
        let last = fp.last();
        prop_assert!(phi(&params, &graph, last).unwrap().max_abs_diff(last) < 1e-10);
    }
}

fn composed_oracle(params: &IdgnnParams, graph: &idgnn::data::DynamicGraph, z: &DenseMatrix) -> DVector<f64> {
    let mut y = DVector::from_vec(z.to_col_vec());
    for t in 0..graph.num_snapshots() {
        let s = graph.snapshot(t);
        let vx = to_na(params.v_for(t)) * to_na(&s.features);
        let pre = kron_oracle(params.w_for(t), &s.adjacency) * y + DVector::from_column_slice(vx.as_slice());
        y = activate(params.activation, pre);
    }
    y
}

#[test]
fn composed_map_matches_layer_by_layer_oracle() {
    let mut r = rng(11);
    for (act, sharing) in [
        (Activation::Relu, WeightSharing::ShareV),
        (Activation::Tanh, WeightSharing::ShareBoth),
        (Activation::Tanh, WeightSharing::NotShare),
    ] {
        let graph = random_graph(4, 3, 2, 2, &mut r);
        let params = random_params(&shape(3, 2, 3, 2, act, sharing), 1.0, &mut r);
        let z = random_dense(3, 4, 1.0, &mut r);
        let expected = composed_oracle(&params, &graph, &z);
        assert!(rel_err(&phi(&params, &graph, &z).unwrap().to_col_vec(), expected.as_slice()) < 1e-13);
    }
}

#[test]
fn training_gradients_match_finite_differences() {
    let cfg = FixedPointConfig {
        tol: 1e-14,
        max_sweeps: 20_000,
        ..FixedPointConfig::default()
    };
    for seed in 0..4 {
        let mut r = rng(100 + seed);
        let ds = random_dataset(4, 3, 2, &mut r);
        let graph = &ds.graphs[0];
        let mut params = random_params(&shape(3, 2, 3, 3, Activation::Tanh, WeightSharing::NotShare), 1.5, &mut r);
        WellPosedness::from_graphs(&[graph], 0.8).unwrap().project(&mut params).unwrap();
        let mask = vec![true; 4];
        let loss = |p: &IdgnnParams| {
            let fp = fixed_point_solve(p, graph, &cfg, None).unwrap();
            loss_and_grad_z(&p.head, fp.last(), graph.labels(), &mask, &ds.task).unwrap()
        };
        let fd = fd_gradient(
            |x| {
                let mut p = params.clone();
                p.set_omega_from_vec(x);
                loss(&p).loss
            },
            &params.omega_to_vec(),
            1e-6,
        );
        let fp = fixed_point_solve(&params, graph, &cfg, None).unwrap();
        let dz = loss(&params).dz;
        let forward = forward_mode_grads(&fp, &params, graph, &dz, &cfg).unwrap().omega_to_vec();
        let u = adjoint_solve(&fp, &params, graph, &dz, &cfg, None).unwrap();
        let adjoint = param_grads_from_adjoint(&u, &fp, &params, graph).unwrap().omega_to_vec();
        assert!(rel_err(&forward, &fd) < 1e-6, "seed {seed}: forward vs fd {}", rel_err(&forward, &fd));
        assert!(rel_err(&adjoint, &fd) < 1e-6, "seed {seed}: adjoint vs fd {}", rel_err(&adjoint, &fd));
    }
}

#[test]
fn lower_level_gradients_match_finite_differences() {
    let mut r = rng(5);
    let graph = random_graph(4, 3, 2, 2, &mut r);
    let params = random_params(&shape(3, 2, 3, 2, Activation::Tanh, WeightSharing::ShareV), 0.4, &mut r);
    let z = random_dense(3, 4, 1.0, &mut r);

    let fd_z = fd_gradient(
        |x| lower_g(&DenseMatrix::from_col_vec(3, 4, x).unwrap(), &params, &graph).unwrap(),
        &z.to_col_vec(),
        1e-6,
    );
    assert!(rel_err(&grad_z_g(&z, &params, &graph).unwrap().to_col_vec(), &fd_z) < 1e-7);

    let fd_omega = fd_gradient(
        |x| {
            let mut p = params.clone();
            p.set_omega_from_vec(x);
            lower_g(&z, &p, &graph).unwrap()
        },
        &params.omega_to_vec(),
        1e-6,
    );
    assert!(rel_err(&grad_omega_g(&z, &params, &graph).unwrap().omega_to_vec(), &fd_omega) < 1e-7);
}

#[test]
fn dirichlet_energy_matches_dense_definition() {
    let mut r = rng(3);
    let a = random_sparse(7, 0.4, &mut r);
    let z = random_dense(4, 7, 1.0, &mut r);
    let (zn, an) = (to_na(&z), sparse_to_na(&a));
    let mut total = 0.0;
    for i in 0..7 {
        for j in 0..7 {
            if an[(i, j)] != 0.0 {
                total += (zn.column(i) - zn.column(j)).norm_squared();
            }
        }
    }
    let expected = (total / 7.0).sqrt();
    assert!((dirichlet_energy(&z, &a).unwrap() - expected).abs() < 1e-12);
}
