//! Independent reference implementations for the integration tests. Nothing
//! here calls the library's kernels: operators are materialized densely with
//! nalgebra and derivatives come from finite differences.

#![allow(dead_code)]

use idgnn::data::{Dataset, DynamicGraph, Labels, SnapshotGraph, Task};
use idgnn::model::{Activation, IdgnnParams, ModelShape, WeightSharing};
use idgnn::tensor::{DenseMatrix, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn sparse_to_na(a: &SparseMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.rows(), a.cols());
    for (i, j, v) in a.triplets() {
        out[(i, j)] += v;
    }
    out
}

pub fn random_dense(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Square matrix with roughly `density·n²` entries in `[-1, 1]`, not symmetric.
pub fn random_sparse(n: usize, density: f64, rng: &mut impl Rng) -> SparseMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random_bool(density) {
                triplets.push((i, j, rng.random_range(-1.0..=1.0)));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, triplets).unwrap()
}

/// A dynamic graph with random weighted adjacencies and features, all nodes labeled.
pub fn random_graph(n: usize, big_t: usize, l: usize, classes: usize, rng: &mut impl Rng) -> DynamicGraph {
    let snapshots = (0..big_t)
        .map(|_| SnapshotGraph::new(random_sparse(n, 0.4, rng), random_dense(l, n, 1.0, rng)).unwrap())
        .collect();
    let labels = Labels::Classes((0..n).map(|_| rng.random_range(0..classes)).collect());
    DynamicGraph::new(snapshots, labels, vec![true; n]).unwrap()
}

pub fn random_dataset(n: usize, big_t: usize, l: usize, rng: &mut impl Rng) -> Dataset {
    Dataset::new(Task::Classification { num_classes: 3 }, vec![random_graph(n, big_t, l, 3, rng)]).unwrap()
}

pub fn shape(d: usize, l: usize, big_t: usize, classes: usize, act: Activation, sharing: WeightSharing) -> ModelShape {
    ModelShape {
        hidden_dim: d,
        feature_dim: l,
        output_dim: classes,
        num_snapshots: big_t,
        activation: act,
        sharing,
    }
}

/// Unprojected random parameters with entries of size `scale`.
pub fn random_params(shape: &ModelShape, scale: f64, rng: &mut impl Rng) -> IdgnnParams {
    let mut p = IdgnnParams::zeros(shape);
    for m in p.w.iter_mut().chain(p.v.iter_mut()) {
        *m = random_dense(m.rows(), m.cols(), scale, rng);
    }
    p.head.weight = random_dense(p.head.weight.rows(), p.head.weight.cols(), 1.0, rng);
    p
}

/// `(Aᵀ ⊗ W)` acting on the column-wise vectorization of a `d×n` block.
pub fn kron_oracle(w: &DenseMatrix, a: &SparseMatrix) -> DMatrix<f64> {
    sparse_to_na(a).transpose().kronecker(&to_na(w))
}

/// Stacked column-wise vectorizations of the blocks.
pub fn stack(zs: &[DenseMatrix]) -> DVector<f64> {
    DVector::from_iterator(zs.iter().map(|z| z.rows() * z.cols()).sum(), zs.iter().flat_map(|z| z.to_col_vec()))
}

pub fn unstack(v: &DVector<f64>, d: usize, n: usize) -> Vec<DenseMatrix> {
    v.as_slice()
        .chunks(d * n)
        .map(|c| DenseMatrix::from_col_vec(d, n, c).unwrap())
        .collect()
}

/// The coupled system as one block matrix `ℳ` and offset `b`: block row `t`
/// holds `(A^t)ᵀ ⊗ W^t` in block column `t−1` (wrapping), and `b_t = vec(V X^t)`.
pub fn block_map(params: &IdgnnParams, graph: &DynamicGraph) -> (DMatrix<f64>, DVector<f64>) {
    let big_t = graph.num_snapshots();
    let (d, n) = (params.hidden_dim(), graph.num_nodes());
    let k = d * n;
    let mut m = DMatrix::zeros(k * big_t, k * big_t);
    let mut b = DVector::zeros(k * big_t);
    for t in 0..big_t {
        let s = graph.snapshot(t);
        let prev = (t + big_t - 1) % big_t;
        m.view_mut((t * k, prev * k), (k, k))
            .copy_from(&kron_oracle(&params.w[params.w_slot(t)], &s.adjacency));
        let vx = to_na(&params.v[params.v_slot(t)]) * to_na(&s.features);
        b.rows_mut(t * k, k).copy_from(&DVector::from_column_slice(vx.as_slice()));
    }
    (m, b)
}

pub fn activate(act: Activation, v: DVector<f64>) -> DVector<f64> {
    v.map(|x| match act {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
    })
}

/// Plain Picard iteration on the materialized block map.
pub fn oracle_fixed_point(params: &IdgnnParams, graph: &DynamicGraph, tol: f64, max_iter: usize) -> DVector<f64> {
    let (m, b) = block_map(params, graph);
    let mut z = DVector::zeros(b.len());
    for _ in 0..max_iter {
        let next = activate(params.activation, &m * &z + &b);
        let done = (&next - &z).amax() <= tol;
        z = next;
        if done {
            break;
        }
    }
    z
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Central differences of a scalar function.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + h;
            let plus = f(&xs);
            xs[i] = x[i] - h;
            let minus = f(&xs);
            xs[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Central difference of a vector function along `dir`.
pub fn fd_directional(mut f: impl FnMut(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    let at = |s: f64| x.iter().zip(dir).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let plus = f(&at(h));
    let minus = f(&at(-h));
    plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

/// `max |a − b| / max(‖a‖_∞, ‖b‖_∞)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
