//! Experiment harness behind the CLI: configs, the training runner with
//! validation-based model selection, evaluation artifacts, the runtime
//! benchmark and the gradient oracle check.

mod bench;
mod config;
mod eval;
mod oracle;
mod train;

pub use bench::{loglog_slope, median, run_bench, BenchConfig, BenchOptimizer, BenchReport, SizeSummary, Timing};
pub use config::{DataSource, ExperimentConfig, OptimizerKind, SplitConfig};
pub use eval::{embeddings_csv, evaluate, evaluate_all, Evaluation, ForwardKind, MetricsFile, SavedModel};
pub use oracle::{oracle_check, oracle_instance, relative_error, OracleConfig, OracleReport};
pub use train::{run_experiment, train, train_log_csv, write_artifacts, EpochRecord, TrainContext, TrainOutcome};
