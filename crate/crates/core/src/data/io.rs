//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json           {"n", "T", "l", "task", "num_classes_or_target_dim", "N"}
//! <dir>/g<g>/edges_<t>.csv      header `src,dst,weight`, 0-based node ids, one row per stored entry
//! <dir>/g<g>/features_<t>.csv   n rows × l columns, no header
//! <dir>/g<g>/labels.csv         n rows, no header; class id (or -1) / target values (or NA)
//! ```
//!
//! Graph and snapshot indices are 0-based.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{Dataset, DynamicGraph, Labels, SnapshotGraph, Task};
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub T: usize,
    pub l: usize,
    pub task: TaskKind,
    pub num_classes_or_target_dim: usize,
    pub N: usize,
}

impl Manifest {
    pub fn for_dataset(ds: &Dataset) -> Self {
        let (task, k) = match ds.task {
            Task::Classification { num_classes } => (TaskKind::Classification, num_classes),
            Task::Regression { target_dim } => (TaskKind::Regression, target_dim),
        };
        Manifest {
            n: ds.num_nodes(),
            T: ds.num_snapshots(),
            l: ds.feature_dim(),
            task,
            num_classes_or_target_dim: k,
            N: ds.graphs.len(),
        }
    }

    pub fn task(&self) -> Task {
        match self.task {
            TaskKind::Classification => Task::Classification {
                num_classes: self.num_classes_or_target_dim,
            },
            TaskKind::Regression => Task::Regression {
                target_dim: self.num_classes_or_target_dim,
            },
        }
    }
}

const UNLABELED_TARGET: &str = "NA";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            detail: format!("{other:?}"),
        },
    }
}

fn open_reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn parse_f64(path: &Path, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteFile(path.to_path_buf()));
    }
    Ok(v)
}

fn parse_index(path: &Path, field: &str) -> Result<usize> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        detail: format!("not a node id: {field:?}"),
    })
}

fn read_edges(path: &Path, n: usize) -> Result<SparseMatrix> {
    let mut rdr = open_reader(path, true)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["src", "dst", "weight"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            detail: format!("expected header src,dst,weight, got {header:?}"),
        });
    }
    let mut triplets = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("edge row with {} fields", rec.len()),
            });
        }
        let src = parse_index(path, &rec[0])?;
        let dst = parse_index(path, &rec[1])?;
        let w = parse_f64(path, &rec[2])?;
        if src >= n || dst >= n {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("edge ({src}, {dst}) references a node outside 0..{n}"),
            });
        }
        triplets.push((src, dst, w));
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

fn read_features(path: &Path, n: usize, l: usize) -> Result<DenseMatrix> {
    let mut rdr = open_reader(path, false)?;
    let mut x = DenseMatrix::zeros(l, n);
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rows >= n || rec.len() != l {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("expected {n} rows of {l} columns, row {rows} has {}", rec.len()),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            x[(k, rows)] = parse_f64(path, field)?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("expected {n} rows, found {rows}"),
        });
    }
    Ok(x)
}

fn read_labels(path: &Path, n: usize, task: Task) -> Result<(Labels, Vec<bool>)> {
    let mut rdr = open_reader(path, false)?;
    let mut labeled = Vec::with_capacity(n);
    let mut classes = Vec::new();
    let width = match task {
        Task::Classification { .. } => 1,
        Task::Regression { target_dim } => target_dim,
    };
    let mut targets = DenseMatrix::zeros(width, n);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if row >= n || rec.len() != width {
            return Err(Error::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("expected {n} rows of {width} columns, row {row} has {}", rec.len()),
            });
        }
        match task {
            Task::Classification { num_classes } => {
                let field = &rec[0];
                if field == "-1" {
                    classes.push(0);
                    labeled.push(false);
                } else {
                    let c = parse_index(path, field)?;
                    if c >= num_classes {
                        return Err(Error::ShapeMismatch {
                            path: path.to_path_buf(),
                            detail: format!("class {c} outside 0..{num_classes}"),
                        });
                    }
                    classes.push(c);
                    labeled.push(true);
                }
            }
            Task::Regression { .. } => {
                if rec.iter().all(|f| f == UNLABELED_TARGET) {
                    labeled.push(false);
                } else {
                    for (k, field) in rec.iter().enumerate() {
                        targets[(k, row)] = parse_f64(path, field)?;
                    }
                    labeled.push(true);
                }
            }
        }
    }
    if labeled.len() != n {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("expected {n} label rows, found {}", labeled.len()),
        });
    }
    let labels = match task {
        Task::Classification { .. } => Labels::Classes(classes),
        Task::Regression { .. } => Labels::Targets(targets),
    };
    Ok((labels, labeled))
}

pub fn graph_dir(root: &Path, g: usize) -> PathBuf {
    root.join(format!("g{g}"))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    if m.T == 0 || m.N == 0 {
        return Err(Error::ShapeMismatch {
            path: dir.join("manifest.json"),
            detail: "T and N must be at least 1".into(),
        });
    }
    let task = m.task();
    let mut graphs = Vec::with_capacity(m.N);
    for g in 0..m.N {
        let gdir = graph_dir(dir, g);
        let mut snapshots = Vec::with_capacity(m.T);
        for t in 0..m.T {
            let adjacency = read_edges(&gdir.join(format!("edges_{t}.csv")), m.n)?;
            let fpath = gdir.join(format!("features_{t}.csv"));
            let features = read_features(&fpath, m.n, m.l)?;
            snapshots.push(SnapshotGraph::new(adjacency, features)?);
        }
        let (labels, labeled) = read_labels(&gdir.join("labels.csv"), m.n, task)?;
        graphs.push(DynamicGraph::new(snapshots, labels, labeled)?);
    }
    Dataset::new(task, graphs)
}

fn write_csv(path: &Path, header: Option<&[&str]>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    if let Some(h) = header {
        w.write_record(h).map_err(|e| csv_err(path, e))?;
    }
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `ds` in the layout read by [`load_dataset`].
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest::for_dataset(ds);
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: mpath.clone(),
        source,
    })?;
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;
    for (g, graph) in ds.graphs.iter().enumerate() {
        let gdir = graph_dir(dir, g);
        fs::create_dir_all(&gdir).map_err(io_err(&gdir))?;
        for (t, snap) in graph.snapshots().iter().enumerate() {
            write_csv(
                &gdir.join(format!("edges_{t}.csv")),
                Some(&["src", "dst", "weight"]),
                snap.adjacency
                    .triplets()
                    .map(|(i, j, v)| vec![i.to_string(), j.to_string(), v.to_string()]),
            )?;
            let x = &snap.features;
            write_csv(
                &gdir.join(format!("features_{t}.csv")),
                None,
                (0..x.cols()).map(|j| x.column(j).iter().map(|v| v.to_string()).collect()),
            )?;
        }
        let labeled = graph.labeled();
        let rows: Vec<Vec<String>> = match graph.labels() {
            Labels::Classes(c) => c
                .iter()
                .zip(labeled)
                .map(|(c, &m)| vec![if m { c.to_string() } else { "-1".into() }])
                .collect(),
            Labels::Targets(t) => (0..t.cols())
                .map(|j| {
                    if labeled[j] {
                        t.column(j).iter().map(|v| v.to_string()).collect()
                    } else {
                        vec![UNLABELED_TARGET.to_string(); t.rows()]
                    }
                })
                .collect(),
        };
        write_csv(&gdir.join("labels.csv"), None, rows.into_iter())?;
    }
    Ok(())
}
