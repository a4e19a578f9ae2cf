use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Dataset, DynamicGraph, SnapshotGraph};
use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Labeled nodes are partitioned; every graph is visible in training.
    Transductive,
    /// Graphs (time windows) are partitioned into contiguous blocks.
    Inductive,
}

/// Disjoint train/validation/test index sets: node ids for transductive
/// splits, graph ids for inductive splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    /// Everything in training: all labeled nodes of every graph.
    pub fn all_train(ds: &Dataset) -> Self {
        DatasetSplit {
            mode: SplitMode::Transductive,
            train: labeled_union(ds),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }

    /// Graph ids whose nodes participate in the given portion.
    pub fn graphs_for(&self, ds: &Dataset, portion: Portion) -> Vec<usize> {
        match self.mode {
            SplitMode::Transductive => (0..ds.graphs.len()).collect(),
            SplitMode::Inductive => self.portion(portion).to_vec(),
        }
    }

    /// Per-node loss/evaluation mask for graph `g` in the given portion.
    pub fn node_mask(&self, graph: &DynamicGraph, g: usize, portion: Portion) -> Vec<bool> {
        let labeled = graph.labeled();
        match self.mode {
            SplitMode::Transductive => {
                let mut mask = vec![false; labeled.len()];
                for &i in self.portion(portion) {
                    mask[i] = labeled[i];
                }
                mask
            }
            SplitMode::Inductive => {
                if self.portion(portion).contains(&g) {
                    labeled.to_vec()
                } else {
                    vec![false; labeled.len()]
                }
            }
        }
    }

    pub fn portion(&self, portion: Portion) -> &[usize] {
        match portion {
            Portion::Train => &self.train,
            Portion::Validation => &self.validation,
            Portion::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Portion {
    Train,
    Validation,
    Test,
}

fn labeled_union(ds: &Dataset) -> Vec<usize> {
    (0..ds.num_nodes())
        .filter(|&i| ds.graphs.iter().any(|g| g.labeled()[i]))
        .collect()
}

fn portion_sizes(total: usize, ratios: (f64, f64, f64)) -> (usize, usize) {
    let train = ((ratios.0 * total as f64).round() as usize).min(total);
    let val = ((ratios.1 * total as f64).round() as usize).min(total - train);
    (train, val)
}

/// Deterministic split given `seed`. Ratios are (train, validation, test).
pub fn split(ds: &Dataset, mode: SplitMode, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    match mode {
        SplitMode::Transductive => {
            let mut nodes = labeled_union(ds);
            nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let (tr, va) = portion_sizes(nodes.len(), ratios);
            let mut train = nodes[..tr].to_vec();
            let mut validation = nodes[tr..tr + va].to_vec();
            let mut test = nodes[tr + va..].to_vec();
            train.sort_unstable();
            validation.sort_unstable();
            test.sort_unstable();
            Ok(DatasetSplit {
                mode,
                train,
                validation,
                test,
            })
        }
        SplitMode::Inductive => {
            let total = ds.graphs.len();
            let (tr, va) = portion_sizes(total, ratios);
            Ok(DatasetSplit {
                mode,
                train: (0..tr).collect(),
                validation: (tr..tr + va).collect(),
                test: (tr + va..total).collect(),
            })
        }
    }
}

/// 0-1 normalization. Per feature dimension, values are mapped affinely so the
/// training-portion minimum goes to 0 and the maximum to 1; constant
/// dimensions become 0. Edge weights are divided by the largest training
/// weight magnitude so that edge structure is preserved.
pub fn normalize_01(ds: &Dataset, split: Option<&DatasetSplit>) -> Dataset {
    let l = ds.feature_dim();
    let (graphs, nodes): (Vec<usize>, Vec<usize>) = match split {
        None => ((0..ds.graphs.len()).collect(), (0..ds.num_nodes()).collect()),
        Some(s) => match s.mode {
            SplitMode::Transductive => ((0..ds.graphs.len()).collect(), s.train.clone()),
            SplitMode::Inductive => (s.train.clone(), (0..ds.num_nodes()).collect()),
        },
    };
    let mut lo = vec![f64::INFINITY; l];
    let mut hi = vec![f64::NEG_INFINITY; l];
    let mut wmax: f64 = 0.0;
    for &g in &graphs {
        for snap in ds.graphs[g].snapshots() {
            for k in 0..l {
                for &j in &nodes {
                    let v = snap.features[(k, j)];
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            wmax = snap.adjacency.values().iter().fold(wmax, |m, v| m.max(v.abs()));
        }
    }
    let mut out = ds.clone();
    for graph in &mut out.graphs {
        for snap in graph.snapshots_mut() {
            for k in 0..l {
                let range = hi[k] - lo[k];
                for v in snap.features.row_mut(k) {
                    *v = if range > 0.0 && range.is_finite() {
                        (*v - lo[k]) / range
                    } else {
                        0.0
                    };
                }
            }
            if wmax > 0.0 {
                snap.adjacency.values_mut().iter_mut().for_each(|w| *w /= wmax);
            }
        }
    }
    out
}

/// `D^{-1/2} (A + I·self_loops) D^{-1/2}` with `D` the row-degree matrix.
/// Rows with zero degree stay zero.
pub fn sym_normalize(a: &SparseMatrix, add_self_loops: bool) -> Result<SparseMatrix> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if a.values().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "symmetric normalization needs non-negative edge weights".into(),
        ));
    }
    let n = a.rows();
    let mut triplets: Vec<(usize, usize, f64)> = a.triplets().collect();
    if add_self_loops {
        triplets.extend((0..n).map(|i| (i, i, 1.0)));
    }
    let with_loops = SparseMatrix::from_triplets(n, n, triplets)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = with_loops.row(i).map(|(_, v)| v).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    SparseMatrix::from_triplets(
        n,
        n,
        with_loops
            .triplets()
            .map(|(i, j, v)| (i, j, v * inv_sqrt[i] * inv_sqrt[j])),
    )
}

/// Applies [`sym_normalize`] to every snapshot adjacency.
pub fn sym_normalize_dataset(ds: &Dataset, add_self_loops: bool) -> Result<Dataset> {
    let mut graphs = Vec::with_capacity(ds.graphs.len());
    for g in &ds.graphs {
        let snaps = g
            .snapshots()
            .iter()
            .map(|s| SnapshotGraph::new(sym_normalize(&s.adjacency, add_self_loops)?, s.features.clone()))
            .collect::<Result<Vec<_>>>()?;
        graphs.push(DynamicGraph::new(snaps, g.labels().clone(), g.labeled().to_vec())?);
    }
    Dataset::new(ds.task, graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::graph::{Labels, Task};
    use crate::tensor::{operator_norm, DenseMatrix};
    use proptest::prelude::*;

    fn dataset(n: usize, graphs: usize, x: impl Fn(usize, usize) -> DenseMatrix) -> Dataset {
        let gs = (0..graphs)
            .map(|g| {
                let snaps = (0..2)
                    .map(|t| SnapshotGraph::new(SparseMatrix::identity(n), x(g, t)).unwrap())
                    .collect();
                DynamicGraph::new(snaps, Labels::Classes(vec![0; n]), vec![true; n]).unwrap()
            })
            .collect();
        Dataset::new(Task::Classification { num_classes: 2 }, gs).unwrap()
    }

    #[test]
    fn transductive_sizes_and_determinism() {
        let ds = dataset(100, 1, |_, _| DenseMatrix::zeros(1, 100));
        let s = split(&ds, SplitMode::Transductive, (0.7, 0.1, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 10, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split(&ds, SplitMode::Transductive, (0.7, 0.1, 0.2), 3).unwrap());
        assert_ne!(s, split(&ds, SplitMode::Transductive, (0.7, 0.1, 0.2), 4).unwrap());
    }

    #[test]
    fn inductive_is_time_contiguous() {
        let ds = dataset(2, 54, |_, _| DenseMatrix::zeros(1, 2));
        let s = split(&ds, SplitMode::Inductive, (0.7, 0.1, 0.2), 0).unwrap();
        let all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all, (0..54).collect::<Vec<_>>());
        assert!(s.train.last() < s.validation.first());
        assert!(s.validation.last() < s.test.first());
        assert_eq!(s.train.len(), 38);
    }

    #[test]
    fn bad_ratios() {
        let ds = dataset(4, 1, |_, _| DenseMatrix::zeros(1, 4));
        assert!(split(&ds, SplitMode::Transductive, (0.7, 0.1, 0.1), 0).is_err());
        assert!(split(&ds, SplitMode::Transductive, (1.2, -0.2, 0.0), 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let ds = dataset(3, 1, |_, t| {
            DenseMatrix::from_rows(&[[5.0, 5.0, 5.0], [2.0, 3.0, 4.0], [0.0, 0.5 * t as f64, 1.0]]).unwrap()
        });
        let out = normalize_01(&ds, None);
        let x = &out.graphs[0].snapshot(0).features;
        assert_eq!(x.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(x[(1, 1)], 0.5);
        assert_eq!(x.row(2), ds.graphs[0].snapshot(0).features.row(2));
        assert_eq!(out.graphs[0].snapshot(1).features.row(2), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_uses_training_nodes_only() {
        let ds = dataset(3, 1, |_, _| DenseMatrix::from_rows(&[[0.0, 2.0, 10.0]]).unwrap());
        let s = DatasetSplit {
            mode: SplitMode::Transductive,
            train: vec![0, 1],
            validation: vec![],
            test: vec![2],
        };
        let out = normalize_01(&ds, Some(&s));
        assert_eq!(out.graphs[0].snapshot(0).features.row(0), &[0.0, 1.0, 5.0]);
    }

    #[test]
    fn sym_normalize_examples() {
        let single = SparseMatrix::from_triplets(1, 1, [(0, 0, 1.0)]).unwrap();
        assert_eq!(sym_normalize(&single, false).unwrap().to_dense()[(0, 0)], 1.0);
        let edge = SparseMatrix::from_undirected_edges(2, [(0, 1, 1.0)]).unwrap();
        let d = sym_normalize(&edge, true).unwrap().to_dense();
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[(i, j)] - 0.5).abs() < 1e-15);
            }
        }
        let empty = SparseMatrix::zeros(4, 4);
        assert_eq!(sym_normalize(&empty, true).unwrap(), SparseMatrix::identity(4));
        assert_eq!(sym_normalize(&empty, false).unwrap().nnz(), 0);
        let neg = SparseMatrix::from_triplets(2, 2, [(0, 1, -1.0)]).unwrap();
        assert!(sym_normalize(&neg, true).is_err());
    }

    proptest! {
        #[test]
        fn sym_normalized_operator_norm_at_most_one(
            edges in prop::collection::vec((0usize..12, 0usize..12, 0.1f64..3.0), 0..40),
            loops in any::<bool>(),
        ) {
            let a = SparseMatrix::from_undirected_edges(12, edges).unwrap();
            let s = sym_normalize(&a, loops).unwrap();
            let norm = match operator_norm(&s, 1e-10, 5000) {
                Ok(v) => v,
                Err(Error::PowerIteration { estimate, .. }) => estimate,
                Err(e) => panic!("{e}"),
            };
            prop_assert!(norm <= 1.0 + 1e-9);
        }
    }
}
