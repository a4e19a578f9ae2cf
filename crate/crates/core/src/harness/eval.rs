use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSplit, DynamicGraph, Labels, Portion, Task};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, dirichlet_energy, mad, mape, roc_auc_macro, softmax_columns, task_loss, MetricReport};
use crate::model::{fixed_point_solve, no_loop_forward, predict_head, FixedPointConfig, IdgnnParams};
use crate::tensor::DenseMatrix;

/// How embeddings are produced from parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardKind {
    /// The fixed point of the coupled map.
    FixedPoint,
    /// One pass through the snapshots from zero.
    NoLoop,
}

/// Contents of a params file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub forward: ForwardKind,
    pub params: IdgnnParams,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Final-snapshot embeddings `Z_T` (d×n) of one graph.
    pub fn embeddings(&self, graph: &DynamicGraph, cfg: &FixedPointConfig) -> Result<DenseMatrix> {
        self.params.check_graph(graph.num_snapshots(), graph.feature_dim())?;
        match self.forward {
            ForwardKind::FixedPoint => Ok(fixed_point_solve(&self.params, graph, cfg, None)?.last().clone()),
            ForwardKind::NoLoop => Ok(no_loop_forward(&self.params, graph)?.output),
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Metrics of one portion of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub reports: Vec<MetricReport>,
}

impl Evaluation {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.name == name).map(|r| r.value)
    }

    /// The task's headline metric and whether larger is better: ROC AUC
    /// (falling back to accuracy) for classification, MAPE for regression.
    pub fn primary(&self) -> Option<(f64, bool)> {
        self.metric("roc_auc")
            .or_else(|| self.metric("accuracy"))
            .map(|v| (v, true))
            .or_else(|| self.metric("mape").map(|v| (v, false)))
    }
}

/// `metrics.json`: evaluations keyed by portion name.
pub type MetricsFile = BTreeMap<String, Evaluation>;

/// Evaluates `model` on the labeled nodes of `portion`. Dirichlet energy and
/// MAD are computed on all nodes of the final snapshot and averaged over the
/// graphs involved. Returns `None` when the portion has no labeled nodes.
pub fn evaluate(
    model: &SavedModel,
    ds: &Dataset,
    split: &DatasetSplit,
    portion: Portion,
    cfg: &FixedPointConfig,
) -> Result<Option<Evaluation>> {
    let mut acc = Accumulator::default();
    for g in split.graphs_for(ds, portion) {
        let graph = &ds.graphs[g];
        let mask = split.node_mask(graph, g, portion);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let z = model.embeddings(graph, cfg).map_err(|e| e.in_graph(g))?;
        acc.add(model, &ds.task, graph, &z, &mask)?;
    }
    acc.finish(&ds.task)
}

#[derive(Default)]
struct Accumulator {
    graphs: usize,
    nodes: usize,
    loss_sum: f64,
    correct: f64,
    scores: Vec<Vec<f64>>,
    classes: Vec<usize>,
    predictions: Vec<f64>,
    targets: Vec<f64>,
    energy: f64,
    mad_sum: f64,
    mad_graphs: usize,
}

impl Accumulator {
    fn add(&mut self, model: &SavedModel, task: &Task, graph: &DynamicGraph, z: &DenseMatrix, mask: &[bool]) -> Result<()> {
        let outputs = predict_head(&model.params.head, z)?;
        let (loss, _) = task_loss(task, &outputs, graph.labels(), mask)?;
        let m = mask.iter().filter(|&&b| b).count();
        self.loss_sum += loss * m as f64;
        self.nodes += m;
        self.graphs += 1;
        match graph.labels() {
            Labels::Classes(c) => {
                self.correct += accuracy(&outputs, c, mask)? * m as f64;
                let probs = softmax_columns(&outputs);
                self.scores.resize(probs.rows(), Vec::new());
                for j in (0..z.cols()).filter(|&j| mask[j]) {
                    for (k, row) in self.scores.iter_mut().enumerate() {
                        row.push(probs[(k, j)]);
                    }
                    self.classes.push(c[j]);
                }
            }
            Labels::Targets(y) => {
                for j in (0..z.cols()).filter(|&j| mask[j]) {
                    for k in 0..y.rows() {
                        self.predictions.push(outputs[(k, j)]);
                        self.targets.push(y[(k, j)]);
                    }
                }
            }
        }
        let last = graph.snapshot(graph.num_snapshots() - 1);
        self.energy += dirichlet_energy(z, &last.adjacency)?;
        match mad(z, &last.adjacency) {
            Ok(r) => {
                self.mad_sum += r.value;
                self.mad_graphs += 1;
            }
            Err(Error::UndefinedMetric(msg)) => log::warn!("MAD skipped: {msg}"),
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn finish(self, task: &Task) -> Result<Option<Evaluation>> {
        if self.nodes == 0 {
            return Ok(None);
        }
        let n = self.nodes;
        let mut reports = vec![MetricReport::new("loss", self.loss_sum / n as f64, n)];
        match task {
            Task::Classification { .. } => {
                reports.push(MetricReport::new("accuracy", self.correct / n as f64, n));
                let k = self.scores.len();
                let flat: Vec<f64> = self.scores.into_iter().flatten().collect();
                let scores = DenseMatrix::from_vec(k, n, flat)?;
                match roc_auc_macro(&scores, &self.classes) {
                    Ok(mut r) => {
                        r.name = "roc_auc".into();
                        reports.push(r);
                    }
                    Err(Error::UndefinedMetric(msg)) => log::warn!("ROC AUC skipped: {msg}"),
                    Err(e) => return Err(e),
                }
            }
            Task::Regression { .. } => reports.push(mape(&self.predictions, &self.targets)?),
        }
        reports.push(MetricReport::new("dirichlet_energy", self.energy / self.graphs as f64, self.graphs));
        if self.mad_graphs > 0 {
            reports.push(MetricReport::new("mad", self.mad_sum / self.mad_graphs as f64, self.mad_graphs));
        }
        Ok(Some(Evaluation {
            loss: self.loss_sum / n as f64,
            reports,
        }))
    }
}

/// Evaluates every non-empty portion.
pub fn evaluate_all(
    model: &SavedModel,
    ds: &Dataset,
    split: &DatasetSplit,
    cfg: &FixedPointConfig,
) -> Result<MetricsFile> {
    let mut out = MetricsFile::new();
    for (name, portion) in [
        ("train", Portion::Train),
        ("validation", Portion::Validation),
        ("test", Portion::Test),
    ] {
        if let Some(e) = evaluate(model, ds, split, portion, cfg)? {
            out.insert(name.to_string(), e);
        }
    }
    Ok(out)
}

/// Embeddings as CSV: one row per node, one column per embedding dimension.
pub fn embeddings_csv(z: &DenseMatrix) -> String {
    let mut out = (0..z.rows()).map(|k| format!("z{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for j in 0..z.cols() {
        let row: Vec<String> = (0..z.rows()).map(|k| z[(k, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_toy_longrange;
    use crate::model::{Activation, ModelShape, WeightSharing};

    fn toy_model(forward: ForwardKind) -> (SavedModel, Dataset) {
        let ds = gen_toy_longrange(3, 10, 1, 2).unwrap();
        let shape = ModelShape {
            hidden_dim: 4,
            feature_dim: 10,
            output_dim: 10,
            num_snapshots: 3,
            activation: Activation::Relu,
            sharing: WeightSharing::ShareV,
        };
        (
            SavedModel {
                forward,
                params: IdgnnParams::zeros(&shape),
            },
            ds,
        )
    }

    #[test]
    fn zero_layer_weights_give_activated_inputs() {
        let (mut model, ds) = toy_model(ForwardKind::FixedPoint);
        model.params.v[0] = DenseMatrix::from_fn(4, 10, |i, j| (i as f64) - (j as f64) / 3.0);
        let graph = &ds.graphs[0];
        let z = model.embeddings(graph, &FixedPointConfig::default()).unwrap();
        let expected = model.params.v[0].matmul(&graph.snapshot(2).features).unwrap().map(|x| x.max(0.0));
        assert!(z.max_abs_diff(&expected) < 1e-12);
        let e = evaluate(&model, &ds, &DatasetSplit::all_train(&ds), Portion::Train, &FixedPointConfig::default())
            .unwrap()
            .unwrap();
        assert!(e.metric("dirichlet_energy").unwrap().is_finite());
        // uniform logits: loss ln 10, AUC 0.5
        assert!((e.loss - 10f64.ln()).abs() < 1e-12);
        assert!((e.metric("roc_auc").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn embeddings_csv_has_one_row_per_node() {
        let z = DenseMatrix::from_fn(3, 5, |i, j| (i * j) as f64);
        let csv = embeddings_csv(&z);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "z0,z1,z2");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
        assert_eq!(lines[5], "0,4,8");
    }

    #[test]
    fn saved_model_round_trips() {
        let (model, _) = toy_model(ForwardKind::NoLoop);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        model.save(&path).unwrap();
        assert_eq!(SavedModel::load(&path).unwrap(), model);
    }
}
