use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerKind};
use super::eval::{evaluate, evaluate_all, write_json, write_text, Evaluation, ForwardKind, MetricsFile, SavedModel};
use crate::bilevel::{epoch_batches, BilevelTrainer, StepLog};
use crate::data::{Dataset, DatasetSplit, DynamicGraph, Portion};
use crate::error::{Error, Result};
use crate::grad::{no_loop_train_step, sgd_train_step, SgdConfig, SgdState};
use crate::model::{IdgnnParams, WellPosedness};

/// Train and validation figures recorded at a validation epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub train: Option<Evaluation>,
    pub validation: Option<Evaluation>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation score, or the last ones when there
    /// is no validation portion.
    pub best: SavedModel,
    pub last: SavedModel,
    pub best_epoch: usize,
    pub log: Vec<StepLog>,
    pub epochs: Vec<EpochRecord>,
    /// Evaluation of `best` on every non-empty portion.
    pub metrics: MetricsFile,
}

impl TrainOutcome {
    /// First validation epoch whose training accuracy reached `target`.
    pub fn first_epoch_with_train_accuracy(&self, target: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|r| r.train.as_ref().and_then(|e| e.metric("accuracy")).is_some_and(|a| a >= target))
            .map(|r| r.epoch)
    }
}

/// Everything a training loop needs besides the parameters.
pub struct TrainContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub ds: &'a Dataset,
    pub split: &'a DatasetSplit,
    pub wellposedness: WellPosedness,
}

impl<'a> TrainContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, ds: &'a Dataset, split: &'a DatasetSplit) -> Result<Self> {
        let graphs: Vec<&DynamicGraph> = ds.graphs.iter().collect();
        Ok(TrainContext {
            cfg,
            ds,
            split,
            wellposedness: WellPosedness::from_graphs(&graphs, cfg.kappa)?,
        })
    }

    /// Projected initial parameters.
    pub fn initial_params(&self) -> Result<IdgnnParams> {
        let mut params = IdgnnParams::init(&self.cfg.model_shape(self.ds), self.cfg.seed);
        self.wellposedness.project(&mut params)?;
        Ok(params)
    }

    fn forward(&self) -> ForwardKind {
        match self.cfg.optimizer {
            OptimizerKind::NoLoop => ForwardKind::NoLoop,
            _ => ForwardKind::FixedPoint,
        }
    }
}

fn better(candidate: &Evaluation, incumbent: &Evaluation) -> bool {
    match (candidate.primary(), incumbent.primary()) {
        (Some((a, up)), Some((b, _))) if a != b => {
            if up {
                a > b
            } else {
                a < b
            }
        }
        _ => candidate.loss < incumbent.loss,
    }
}

/// Trains from `params`, calling `observer` with the parameters after every
/// step. Validation runs every `eval_every` epochs and after the last one.
pub fn train(
    ctx: &TrainContext<'_>,
    params: IdgnnParams,
    mut observer: impl FnMut(usize, &IdgnnParams) -> Result<()>,
) -> Result<TrainOutcome> {
    let cfg = ctx.cfg;
    let ds = ctx.ds;
    let masks: Vec<Vec<bool>> = ds
        .graphs
        .iter()
        .enumerate()
        .map(|(g, graph)| ctx.split.node_mask(graph, g, Portion::Train))
        .collect();
    let train_graphs: Vec<usize> = ctx
        .split
        .graphs_for(ds, Portion::Train)
        .into_iter()
        .filter(|&g| masks[g].iter().any(|&m| m))
        .collect();
    if train_graphs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let forward = ctx.forward();
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut bilevel = match cfg.optimizer {
        OptimizerKind::Bilevel => Some(BilevelTrainer::new(
            &params,
            ds,
            cfg.bilevel(),
            ctx.wellposedness.clone(),
            &mut rng,
        )?),
        _ => None,
    };
    let sgd_cfg = SgdConfig {
        lr: cfg.eta0,
        mode: cfg.grad_mode,
        fixed_point: cfg.fixed_point,
        warm_start: true,
    };
    let mut sgd_state = SgdState::new(ds.graphs.len());

    let mut log = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(IdgnnParams, Evaluation, usize)> = None;
    for epoch in 1..=cfg.epochs {
        for batch in epoch_batches(&train_graphs, cfg.batch_size, &mut rng) {
            let start = Instant::now();
            let step = log.len();
            let (loss, residual) = match cfg.optimizer {
                OptimizerKind::Bilevel => bilevel
                    .as_mut()
                    .expect("bilevel trainer")
                    .step(&mut params, ds, &batch, &masks)
                    .map_err(|e| match e {
                        Error::NonFiniteStep { .. } => e,
                        e => e.at_step(step),
                    })?,
                OptimizerKind::SgdIft => {
                    let s = sgd_train_step(&mut params, &ctx.wellposedness, ds, &batch, &masks, &sgd_cfg, &mut sgd_state)
                        .map_err(|e| e.at_step(step))?;
                    (s.loss, s.residual)
                }
                OptimizerKind::NoLoop => {
                    let s = no_loop_train_step(&mut params, &ctx.wellposedness, ds, &batch, &masks, cfg.eta0)
                        .map_err(|e| e.at_step(step))?;
                    (s.loss, s.residual)
                }
            };
            let wall_ms = if cfg.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64() * 1e3
            };
            log.push(StepLog {
                step,
                loss,
                residual,
                wall_ms,
            });
            observer(step, &params)?;
        }
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        if due {
            let model = SavedModel {
                forward,
                params: params.clone(),
            };
            let train = evaluate(&model, ds, ctx.split, Portion::Train, &cfg.fixed_point)?;
            let validation = evaluate(&model, ds, ctx.split, Portion::Validation, &cfg.fixed_point)?;
            if let Some(v) = &validation {
                if best.as_ref().is_none_or(|(_, b, _)| better(v, b)) {
                    best = Some((params.clone(), v.clone(), epoch));
                }
            }
            epochs.push(EpochRecord {
                epoch,
                train,
                validation,
            });
        }
    }
    let last = SavedModel { forward, params };
    let (best, best_epoch) = match best {
        Some((p, _, e)) => (SavedModel { forward, params: p }, e),
        None => (last.clone(), cfg.epochs),
    };
    let metrics = evaluate_all(&best, ds, ctx.split, &cfg.fixed_point)?;
    Ok(TrainOutcome {
        best,
        last,
        best_epoch,
        log,
        epochs,
        metrics,
    })
}

/// Resolves the config, trains, and writes the artifacts when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (ds, split) = cfg.prepare()?;
    let ctx = TrainContext::new(cfg, &ds, &split)?;
    let outcome = train(&ctx, ctx.initial_params()?, |_, _| Ok(()))?;
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}

pub fn train_log_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,loss,residual,wall_ms\n");
    for s in log {
        let _ = writeln!(out, "{},{},{},{}", s.step, s.loss, s.residual, s.wall_ms);
    }
    out
}

fn epoch_log_csv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,validation_loss,validation_score\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            fmt(r.train.as_ref().map(|e| e.loss)),
            fmt(r.train.as_ref().and_then(|e| e.metric("accuracy"))),
            fmt(r.validation.as_ref().map(|e| e.loss)),
            fmt(r.validation.as_ref().and_then(|e| e.primary()).map(|p| p.0)),
        );
    }
    out
}

/// Writes `params.json` (best), `params_last.json`, `train_log.csv`,
/// `epoch_log.csv`, `metrics.json` and `run.json` into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    outcome.best.save(&dir.join("params.json"))?;
    outcome.last.save(&dir.join("params_last.json"))?;
    write_text(&dir.join("train_log.csv"), &train_log_csv(&outcome.log))?;
    write_text(&dir.join("epoch_log.csv"), &epoch_log_csv(&outcome.epochs))?;
    write_json(&dir.join("metrics.json"), &outcome.metrics)?;
    write_json(&dir.join("run.json"), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitMode;
    use crate::harness::{DataSource, SplitConfig};

    fn toy_cfg(optimizer: OptimizerKind) -> ExperimentConfig {
        ExperimentConfig {
            data: Some(DataSource::ToyLongrange {
                T: 3,
                num_classes: 10,
                label_snapshot: 1,
                seed: 1,
            }),
            hidden_dim: 8,
            optimizer,
            epochs: 30,
            deterministic: true,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn every_optimizer_runs_and_stays_feasible() {
        for opt in [OptimizerKind::Bilevel, OptimizerKind::SgdIft, OptimizerKind::NoLoop] {
            let cfg = toy_cfg(opt);
            let (ds, split) = cfg.prepare().unwrap();
            let ctx = TrainContext::new(&cfg, &ds, &split).unwrap();
            let mut steps = 0;
            let out = train(&ctx, ctx.initial_params().unwrap(), |_, p| {
                steps += 1;
                assert!(ctx.wellposedness.is_feasible(p, 1e-12));
                Ok(())
            })
            .unwrap();
            assert_eq!(steps, 30);
            assert_eq!(out.log.len(), 30);
            assert_eq!(out.epochs.len(), 30);
            assert!(out.metrics.contains_key("train"));
            assert!(out.log.iter().all(|s| s.wall_ms == 0.0));
        }
    }

    #[test]
    fn deterministic_runs_repeat_exactly() {
        let cfg = toy_cfg(OptimizerKind::Bilevel);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(train_log_csv(&a.log), train_log_csv(&b.log));
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn best_params_follow_validation() {
        let cfg = ExperimentConfig {
            data: Some(DataSource::ToyBinary { T: 3, seed: 2 }),
            split: Some(SplitConfig {
                mode: SplitMode::Transductive,
                ratios: (0.6, 0.2, 0.2),
                seed: 3,
            }),
            epochs: 10,
            ..toy_cfg(OptimizerKind::SgdIft)
        };
        let out = run_experiment(&cfg).unwrap();
        let record = out.epochs.iter().find(|r| r.epoch == out.best_epoch).unwrap();
        let chosen = record.validation.as_ref().unwrap();
        for r in &out.epochs {
            assert!(!better(r.validation.as_ref().unwrap(), chosen));
        }
        let val = out.metrics.get("validation").unwrap();
        assert_eq!(val.loss, chosen.loss);
        assert!(out.metrics.contains_key("test"));
    }

    #[test]
    fn artifacts_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            epochs: 3,
            out_dir: Some(dir.path().to_path_buf()),
            ..toy_cfg(OptimizerKind::NoLoop)
        };
        run_experiment(&cfg).unwrap();
        for f in ["params.json", "params_last.json", "train_log.csv", "epoch_log.csv", "metrics.json", "run.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = ExperimentConfig::from_json_file(&dir.path().join("run.json")).unwrap();
        assert_eq!(back, cfg);
        let model = SavedModel::load(&dir.path().join("params.json")).unwrap();
        assert_eq!(model.forward, ForwardKind::NoLoop);
    }
}
