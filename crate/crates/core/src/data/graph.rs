use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// Node-level prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Task {
    Classification { num_classes: usize },
    Regression { target_dim: usize },
}

impl Task {
    /// Width of the prediction head.
    pub fn output_dim(&self) -> usize {
        match *self {
            Task::Classification { num_classes } => num_classes,
            Task::Regression { target_dim } => target_dim,
        }
    }
}

/// One snapshot: adjacency over the union node set and an `l×n` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGraph {
    pub adjacency: SparseMatrix,
    pub features: DenseMatrix,
}

impl SnapshotGraph {
    pub fn new(adjacency: SparseMatrix, features: DenseMatrix) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::NotSquare {
                rows: adjacency.rows(),
                cols: adjacency.cols(),
            });
        }
        if features.cols() != adjacency.rows() {
            return Err(Error::dims(
                "SnapshotGraph::new",
                format!(
                    "{} feature columns for {} nodes",
                    features.cols(),
                    adjacency.rows()
                ),
            ));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("snapshot features".into()));
        }
        Ok(Self {
            adjacency,
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }
}

/// Targets attached to the nodes of the final snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class index per node.
    Classes(Vec<usize>),
    /// `target_dim × n` real targets.
    Targets(DenseMatrix),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.cols(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A sequence of `T ≥ 1` snapshots over a shared node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    snapshots: Vec<SnapshotGraph>,
    labels: Labels,
    labeled: Vec<bool>,
}

impl DynamicGraph {
    pub fn new(snapshots: Vec<SnapshotGraph>, labels: Labels, labeled: Vec<bool>) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::InvalidArgument("a dynamic graph needs at least one snapshot".into()))?;
        let n = first.num_nodes();
        let l = first.features.rows();
        for (t, s) in snapshots.iter().enumerate() {
            if s.num_nodes() != n || s.features.rows() != l {
                return Err(Error::dims(
                    "DynamicGraph::new",
                    format!(
                        "snapshot {t} has {} nodes and {} features, expected {n} and {l}",
                        s.num_nodes(),
                        s.features.rows()
                    ),
                ));
            }
        }
        if labels.len() != n || labeled.len() != n {
            return Err(Error::dims(
                "DynamicGraph::new",
                format!(
                    "{} labels and {} mask entries for {n} nodes",
                    labels.len(),
                    labeled.len()
                ),
            ));
        }
        if let Labels::Targets(t) = &labels {
            if !t.is_finite() {
                return Err(Error::NonFinite("regression targets".into()));
            }
        }
        Ok(Self {
            snapshots,
            labels,
            labeled,
        })
    }

    pub fn snapshots(&self) -> &[SnapshotGraph] {
        &self.snapshots
    }

    pub(crate) fn snapshots_mut(&mut self) -> &mut [SnapshotGraph] {
        &mut self.snapshots
    }

    /// Snapshot `t`, zero-based.
    pub fn snapshot(&self, t: usize) -> &SnapshotGraph {
        &self.snapshots[t]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn labeled(&self) -> &[bool] {
        &self.labeled
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots[0].num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots[0].features.rows()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.labeled[i]).collect()
    }
}

/// A collection of dynamic graphs sharing `n`, `T`, `l` and the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub graphs: Vec<DynamicGraph>,
}

impl Dataset {
    pub fn new(task: Task, graphs: Vec<DynamicGraph>) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset has no graphs".into()))?;
        let shape = (first.num_nodes(), first.num_snapshots(), first.feature_dim());
        for (g, graph) in graphs.iter().enumerate() {
            let s = (graph.num_nodes(), graph.num_snapshots(), graph.feature_dim());
            if s != shape {
                return Err(Error::dims(
                    "Dataset::new",
                    format!("graph {g} has (n, T, l) = {s:?}, expected {shape:?}"),
                ));
            }
            match (&task, graph.labels()) {
                (Task::Classification { num_classes }, Labels::Classes(c)) => {
                    if let Some(bad) = c
                        .iter()
                        .zip(graph.labeled())
                        .find(|(&c, &m)| m && c >= *num_classes)
                    {
                        return Err(Error::InvalidArgument(format!(
                            "graph {g}: class {} out of range for {num_classes} classes",
                            bad.0
                        )));
                    }
                }
                (Task::Regression { target_dim }, Labels::Targets(t)) if t.rows() == *target_dim => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "graph {g}: labels do not match task {task:?}"
                    )))
                }
            }
        }
        Ok(Self { task, graphs })
    }

    pub fn num_nodes(&self) -> usize {
        self.graphs[0].num_nodes()
    }

    pub fn num_snapshots(&self) -> usize {
        self.graphs[0].num_snapshots()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }
}

/// The snapshot permutation on 1-based indices: `t ↦ t−1` for `t ≥ 2`, `1 ↦ T`.
#[allow(non_snake_case)]
pub fn tau(t: usize, T: usize) -> Result<usize> {
    if T == 0 || t == 0 || t > T {
        return Err(Error::InvalidArgument(format!(
            "snapshot index {t} outside 1..={T}"
        )));
    }
    Ok(T - ((T - t + 1) % T))
}

/// Zero-based form of [`tau`]: the snapshot whose embedding feeds snapshot `t`.
#[inline]
pub fn prev_snapshot(t: usize, num_snapshots: usize) -> usize {
    (t + num_snapshots - 1) % num_snapshots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_values() {
        assert_eq!(tau(2, 5).unwrap(), 1);
        assert_eq!(tau(1, 7).unwrap(), 7);
        assert_eq!(tau(5, 5).unwrap(), 4);
        assert_eq!(tau(1, 1).unwrap(), 1);
        assert!(tau(0, 3).is_err());
        assert!(tau(4, 3).is_err());
        for big_t in 1..9 {
            for t in 1..=big_t {
                assert_eq!(tau(t, big_t).unwrap(), prev_snapshot(t - 1, big_t) + 1);
            }
        }
    }

    #[test]
    fn graph_invariants() {
        let a = SparseMatrix::identity(3);
        let x = DenseMatrix::zeros(2, 3);
        let s = SnapshotGraph::new(a.clone(), x.clone()).unwrap();
        assert!(SnapshotGraph::new(a.clone(), DenseMatrix::zeros(2, 4)).is_err());
        let g = DynamicGraph::new(vec![s.clone(), s.clone()], Labels::Classes(vec![0, 1, 0]), vec![true; 3])
            .unwrap();
        assert_eq!((g.num_nodes(), g.num_snapshots(), g.feature_dim()), (3, 2, 2));
        assert!(DynamicGraph::new(vec![], Labels::Classes(vec![]), vec![]).is_err());
        assert!(DynamicGraph::new(vec![s.clone()], Labels::Classes(vec![0]), vec![true]).is_err());
        let other = SnapshotGraph::new(SparseMatrix::identity(3), DenseMatrix::zeros(1, 3)).unwrap();
        assert!(DynamicGraph::new(vec![s, other], Labels::Classes(vec![0; 3]), vec![true; 3]).is_err());
        assert!(Dataset::new(Task::Classification { num_classes: 1 }, vec![g.clone()]).is_err());
        assert!(Dataset::new(Task::Regression { target_dim: 1 }, vec![g.clone()]).is_err());
        assert!(Dataset::new(Task::Classification { num_classes: 2 }, vec![g]).is_ok());
    }
}
