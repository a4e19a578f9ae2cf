//! Dynamic-graph data model, on-disk format, preprocessing and generators.

mod generate;
mod graph;
mod io;
mod preprocess;

pub use generate::{
    clique, gen_synthetic, gen_toy_binary, gen_toy_longrange, SyntheticSpec, TOY_BINARY_MAX_SNAPSHOTS,
    TOY_NODES,
};
pub use graph::{prev_snapshot, tau, Dataset, DynamicGraph, Labels, SnapshotGraph, Task};
pub use io::{load_dataset, read_manifest, save_dataset, Manifest, TaskKind};
pub use preprocess::{
    normalize_01, split, sym_normalize, sym_normalize_dataset, DatasetSplit, Portion, SplitMode,
};
