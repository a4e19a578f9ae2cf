use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{write_json, write_text};
use crate::bilevel::{BilevelConfig, BilevelTrainer};
use crate::data::{gen_synthetic, Dataset, DynamicGraph, SyntheticSpec};
use crate::error::{Error, Result};
use crate::grad::{sgd_train_step, GradMode, SgdConfig, SgdState};
use crate::model::{Activation, FixedPointConfig, IdgnnParams, ModelShape, WeightSharing, WellPosedness, DEFAULT_KAPPA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[allow(non_snake_case)]
pub struct BenchConfig {
    /// Node counts to time.
    pub sizes: Vec<usize>,
    pub hidden_dim: usize,
    pub T: usize,
    /// Attribute dimension of the synthetic graphs.
    pub l: usize,
    /// Dynamic graphs per dataset; one epoch takes one step per graph.
    pub graphs: usize,
    pub avg_degree: f64,
    pub repeats: usize,
    /// Time SGD-IFT with forward sensitivities instead of the adjoint solve.
    pub oracle: bool,
    pub fixed_point: FixedPointConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![50, 100, 200],
            hidden_dim: 16,
            T: 5,
            l: 4,
            graphs: 2,
            avg_degree: 4.0,
            repeats: 3,
            oracle: false,
            fixed_point: FixedPointConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchOptimizer {
    SgdIft,
    Bilevel,
}

impl BenchOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            BenchOptimizer::SgdIft => "sgd-ift",
            BenchOptimizer::Bilevel => "bilevel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub optimizer: BenchOptimizer,
    pub n: usize,
    pub repeat: usize,
    pub seconds_per_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub optimizer: BenchOptimizer,
    pub n: usize,
    pub median_seconds_per_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub timings: Vec<Timing>,
    pub medians: Vec<SizeSummary>,
    /// Log-log slope of median time against `n`, per optimizer.
    pub slopes: Vec<(BenchOptimizer, f64)>,
}

impl BenchReport {
    pub fn slope(&self, opt: BenchOptimizer) -> Option<f64> {
        self.slopes.iter().find(|(o, _)| *o == opt).map(|(_, s)| *s)
    }

    pub fn median(&self, opt: BenchOptimizer, n: usize) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.optimizer == opt && m.n == n)
            .map(|m| m.median_seconds_per_window)
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("optimizer,n,repeat,seconds_per_window\n");
        for t in &self.timings {
            let _ = writeln!(out, "{},{},{},{}", t.optimizer.name(), t.n, t.repeat, t.seconds_per_window);
        }
        out
    }

    /// Writes `timings.csv` and `bench.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_text(&dir.join("timings.csv"), &self.timings_csv())?;
        write_json(&dir.join("bench.json"), self)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

struct Instance {
    ds: Dataset,
    params: IdgnnParams,
    wp: WellPosedness,
    masks: Vec<Vec<bool>>,
}

fn instance(cfg: &BenchConfig, n: usize) -> Result<Instance> {
    let ds = gen_synthetic(&SyntheticSpec {
        n,
        T: cfg.T,
        l: cfg.l,
        avg_degree: cfg.avg_degree,
        num_classes: 2,
        N: cfg.graphs,
        seed: cfg.seed.wrapping_add(n as u64),
    })?;
    let graphs: Vec<&DynamicGraph> = ds.graphs.iter().collect();
    let wp = WellPosedness::from_graphs(&graphs, DEFAULT_KAPPA)?;
    let shape = ModelShape {
        hidden_dim: cfg.hidden_dim,
        feature_dim: cfg.l,
        output_dim: 2,
        num_snapshots: cfg.T,
        activation: Activation::Relu,
        sharing: WeightSharing::ShareV,
    };
    let mut params = IdgnnParams::init(&shape, cfg.seed);
    wp.project(&mut params)?;
    let masks = ds.graphs.iter().map(|g| g.labeled().to_vec()).collect();
    Ok(Instance { ds, params, wp, masks })
}

/// Wall time of one epoch (one step per graph) divided by the number of graphs.
/// A first untimed epoch warms the solver caches.
fn seconds_per_window(cfg: &BenchConfig, inst: &Instance, opt: BenchOptimizer) -> Result<f64> {
    let n_graphs = inst.ds.graphs.len();
    let mut params = inst.params.clone();
    let mut epoch = |run: &mut dyn FnMut(&mut IdgnnParams, usize) -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        for g in 0..n_graphs {
            run(&mut params, g)?;
        }
        Ok(start.elapsed().as_secs_f64() / n_graphs as f64)
    };
    match opt {
        BenchOptimizer::SgdIft => {
            let sgd = SgdConfig {
                lr: 0.01,
                mode: if cfg.oracle { GradMode::Forward } else { GradMode::Adjoint },
                fixed_point: cfg.fixed_point,
                warm_start: true,
            };
            let mut state = SgdState::new(n_graphs);
            let mut run = |p: &mut IdgnnParams, g: usize| {
                sgd_train_step(p, &inst.wp, &inst.ds, &[g], &inst.masks, &sgd, &mut state).map(|_| ())
            };
            epoch(&mut run)?;
            epoch(&mut run)
        }
        BenchOptimizer::Bilevel => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut trainer = BilevelTrainer::new(
                &inst.params,
                &inst.ds,
                BilevelConfig::default(),
                inst.wp.clone(),
                &mut rng,
            )?;
            let mut run = |p: &mut IdgnnParams, g: usize| trainer.step(p, &inst.ds, &[g], &inst.masks).map(|_| ());
            epoch(&mut run)?;
            epoch(&mut run)
        }
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.is_empty() || cfg.repeats == 0 || cfg.graphs == 0 {
        return Err(Error::InvalidArgument("bench needs sizes, repeats ≥ 1 and graphs ≥ 1".into()));
    }
    cfg.fixed_point.validate()?;
    let mut timings = Vec::new();
    let mut medians = Vec::new();
    for &n in &cfg.sizes {
        let inst = instance(cfg, n)?;
        for opt in [BenchOptimizer::SgdIft, BenchOptimizer::Bilevel] {
            let mut values = Vec::with_capacity(cfg.repeats);
            for repeat in 0..cfg.repeats {
                let s = seconds_per_window(cfg, &inst, opt)?;
                log::info!("{} n={n} repeat {repeat}: {s:.6} s/window", opt.name());
                timings.push(Timing {
                    optimizer: opt,
                    n,
                    repeat,
                    seconds_per_window: s,
                });
                values.push(s);
            }
            medians.push(SizeSummary {
                optimizer: opt,
                n,
                median_seconds_per_window: median(&mut values),
            });
        }
    }
    let slopes = [BenchOptimizer::SgdIft, BenchOptimizer::Bilevel]
        .into_iter()
        .filter_map(|opt| {
            let pts: Vec<(f64, f64)> = medians
                .iter()
                .filter(|m| m.optimizer == opt)
                .map(|m| (m.n as f64, m.median_seconds_per_window))
                .collect();
            loglog_slope(&pts).map(|s| (opt, s))
        })
        .collect();
    Ok(BenchReport {
        config: cfg.clone(),
        timings,
        medians,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&n: &f64| (n, 3.0 * n.powi(2))).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
        assert!(loglog_slope(&[(5.0, 1.0), (5.0, 2.0)]).is_none());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_bench_produces_rows() {
        let cfg = BenchConfig {
            sizes: vec![8, 12],
            hidden_dim: 3,
            T: 2,
            l: 2,
            repeats: 2,
            oracle: true,
            ..BenchConfig::default()
        };
        let report = run_bench(&cfg).unwrap();
        assert_eq!(report.timings.len(), 8);
        assert_eq!(report.medians.len(), 4);
        assert!(report.slope(BenchOptimizer::Bilevel).is_some());
        assert!(report.median(BenchOptimizer::SgdIft, 12).unwrap() > 0.0);
        assert_eq!(report.timings_csv().lines().count(), 9);
    }
}
