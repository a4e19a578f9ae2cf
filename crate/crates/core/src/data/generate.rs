//! Synthetic dynamic graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{Dataset, DynamicGraph, Labels, SnapshotGraph, Task};
use super::preprocess::sym_normalize;
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Nodes (and attributes) in the toy cliques.
pub const TOY_NODES: usize = 10;
/// Largest depth of the binary toy graph.
pub const TOY_BINARY_MAX_SNAPSHOTS: usize = 64;

/// Unit-weight clique on `n` nodes, stored symmetrically without self-loops.
pub fn clique(n: usize) -> SparseMatrix {
    SparseMatrix::from_undirected_edges(
        n,
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))),
    )
    .expect("clique edges are in range")
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Long-range toy: `T` snapshots of a `num_classes`-clique; node `i` has class `i`.
/// Attributes of snapshot `label_snapshot` (1-based) are the one-hot class codes,
/// every other snapshot is standard normal. All nodes are labeled.
#[allow(non_snake_case)]
pub fn gen_toy_longrange(T: usize, num_classes: usize, label_snapshot: usize, seed: u64) -> Result<Dataset> {
    if T == 0 || label_snapshot == 0 || label_snapshot > T {
        return Err(Error::InvalidArgument(format!(
            "label snapshot {label_snapshot} outside 1..={T}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let n = num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = clique(n);
    let snapshots = (1..=T)
        .map(|t| {
            let x = if t == label_snapshot {
                DenseMatrix::identity(n)
            } else {
                normal_matrix(n, n, &mut rng)
            };
            SnapshotGraph::new(adjacency.clone(), x)
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = DynamicGraph::new(snapshots, Labels::Classes((0..n).collect()), vec![true; n])?;
    Dataset::new(Task::Classification { num_classes }, vec![graph])
}

/// Binary toy: `T ≤ 64` snapshots of a 10-clique; nodes 0–4 are class 0 and
/// 5–9 class 1. The first snapshot carries the one-hot label in its first
/// two attributes (remaining attributes zero); later snapshots are standard normal.
#[allow(non_snake_case)]
pub fn gen_toy_binary(T: usize, seed: u64) -> Result<Dataset> {
    if T == 0 || T > TOY_BINARY_MAX_SNAPSHOTS {
        return Err(Error::InvalidArgument(format!(
            "binary toy supports 1..={TOY_BINARY_MAX_SNAPSHOTS} snapshots, got {T}"
        )));
    }
    let n = TOY_NODES;
    let classes: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = clique(n);
    let snapshots = (1..=T)
        .map(|t| {
            let x = if t == 1 {
                DenseMatrix::from_fn(n, n, |k, j| if k == classes[j] { 1.0 } else { 0.0 })
            } else {
                normal_matrix(n, n, &mut rng)
            };
            SnapshotGraph::new(adjacency.clone(), x)
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = DynamicGraph::new(snapshots, Labels::Classes(classes), vec![true; n])?;
    Dataset::new(Task::Classification { num_classes: 2 }, vec![graph])
}

/// Random sparse dynamic graphs used for runtime scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SyntheticSpec {
    pub n: usize,
    pub T: usize,
    pub l: usize,
    /// Expected undirected degree per node.
    pub avg_degree: f64,
    pub num_classes: usize,
    pub N: usize,
    pub seed: u64,
}

/// Erdős–Rényi-style snapshots with a fixed expected degree, symmetric-normalized
/// with self-loops, standard-normal attributes and uniformly random classes.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n < 2 || spec.T == 0 || spec.N == 0 || spec.l == 0 || spec.num_classes < 2 {
        return Err(Error::InvalidArgument(format!("degenerate synthetic spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let edges_per_snapshot = ((spec.avg_degree * n as f64) / 2.0).round() as usize;
    let mut graphs = Vec::with_capacity(spec.N);
    for _ in 0..spec.N {
        let mut snapshots = Vec::with_capacity(spec.T);
        for _ in 0..spec.T {
            let edges: Vec<(usize, usize, f64)> = (0..edges_per_snapshot)
                .filter_map(|_| {
                    let u = rng.random_range(0..n);
                    let v = rng.random_range(0..n);
                    (u != v).then_some((u.min(v), u.max(v), 1.0))
                })
                .collect();
            let mut adjacency = SparseMatrix::from_undirected_edges(n, edges)?;
            // Repeated pairs are summed by construction; reset them to unit weight.
            adjacency.values_mut().iter_mut().for_each(|w| *w = 1.0);
            let adjacency = sym_normalize(&adjacency, true)?;
            snapshots.push(SnapshotGraph::new(adjacency, normal_matrix(spec.l, n, &mut rng))?);
        }
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.num_classes)).collect();
        graphs.push(DynamicGraph::new(snapshots, Labels::Classes(classes), vec![true; n])?);
    }
    Dataset::new(
        Task::Classification {
            num_classes: spec.num_classes,
        },
        graphs,
    )
}
