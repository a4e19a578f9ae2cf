//! `idgnn` command-line tool: dataset generation, training, evaluation,
//! runtime benchmark and gradient oracle check.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use idgnn::data::{
    gen_synthetic, gen_toy_binary, gen_toy_longrange, save_dataset, DatasetSplit, Manifest, Portion, SplitMode,
    SyntheticSpec, TOY_NODES,
};
use idgnn::grad::GradMode;
use idgnn::harness::{
    embeddings_csv, evaluate, oracle_check, run_bench, run_experiment, BenchConfig, DataSource, ExperimentConfig,
    MetricsFile, OptimizerKind, OracleConfig, SavedModel, SplitConfig,
};
use idgnn::model::{Activation, FixedPointConfig, WeightSharing};

/// Parses a value by its JSON/serde name, e.g. `sgd-ift` or `relu`.
fn serde_name<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "idgnn", version, about = "Implicit dynamic graph neural network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train a model and write params, logs, metrics and run.json.
    Train(TrainArgs),
    /// Evaluate saved params and write metrics.json and embeddings.csv.
    Eval(EvalArgs),
    /// Time SGD-IFT against the bilevel trainer over graph sizes.
    Bench(BenchArgs),
    /// Compare forward-sensitivity, adjoint and finite-difference gradients.
    OracleCheck(OracleArgs),
}

#[derive(Subcommand)]
#[allow(non_snake_case)]
enum GenKind {
    /// Cliques whose labels are hidden in one snapshot's attributes.
    ToyLongrange {
        #[arg(long = "T", default_value_t = 10)]
        T: usize,
        #[arg(long, default_value_t = TOY_NODES)]
        classes: usize,
        /// 1-based snapshot carrying the one-hot labels.
        #[arg(long, default_value_t = 1)]
        label_snapshot: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-class cliques with the labels in the first snapshot.
    ToyBinary {
        #[arg(long = "T", default_value_t = 8)]
        T: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random sparse graphs with normalized adjacency.
    Synthetic {
        #[arg(long)]
        n: usize,
        #[arg(long = "T", default_value_t = 5)]
        T: usize,
        #[arg(long, default_value_t = 8)]
        l: usize,
        #[arg(long, default_value_t = 4.0)]
        degree: f64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        graphs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = serde_name::<OptimizerKind>)]
    optimizer: Option<OptimizerKind>,
    #[arg(long, value_parser = serde_name::<GradMode>)]
    grad_mode: Option<GradMode>,
    #[arg(long, value_parser = serde_name::<Activation>)]
    activation: Option<Activation>,
    #[arg(long, value_parser = serde_name::<WeightSharing>)]
    sharing: Option<WeightSharing>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Parameter step size.
    #[arg(long, alias = "lr")]
    eta0: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Split mode; `all` trains on every labeled node.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    random_init: bool,
    /// Zero wall-clock columns so logs repeat byte for byte.
    #[arg(long)]
    deterministic: bool,
}

fn apply_overrides(mut cfg: ExperimentConfig, a: &TrainArgs) -> Result<ExperimentConfig> {
    if let Some(p) = &a.data {
        cfg.data = Some(DataSource::Path { path: p.clone() });
    }
    if let Some(p) = &a.out {
        cfg.out_dir = Some(p.clone());
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(grad_mode, activation, sharing, hidden_dim, kappa, epochs, batch_size, eta0, eta1, eta2, gamma, eval_every, seed);
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    if let Some(mode) = &a.split {
        cfg.split = match mode.as_str() {
            "all" => None,
            m => Some(SplitConfig {
                mode: serde_name::<SplitMode>(m).map_err(anyhow::Error::msg)?,
                ..cfg.split.unwrap_or_default()
            }),
        };
    }
    if let (Some(seed), Some(split)) = (a.split_seed, cfg.split.as_mut()) {
        split.seed = seed;
    }
    cfg.normalize |= a.normalize;
    cfg.random_init |= a.random_init;
    cfg.deterministic |= a.deterministic;
    Ok(cfg)
}

#[derive(Args)]
struct EvalArgs {
    /// Saved params (params.json from `train`).
    #[arg(long)]
    params: PathBuf,
    /// run.json or another config; supplies the dataset and split.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; overrides the config's dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long, default_value = "all")]
    portion: String,
    /// Graph whose final-snapshot embeddings are written.
    #[arg(long, default_value_t = 0)]
    graph: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct BenchArgs {
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    hidden_dim: usize,
    #[arg(long = "T", default_value_t = 5)]
    T: usize,
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 2)]
    graphs: usize,
    #[arg(long, default_value_t = 4.0)]
    degree: f64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Time SGD-IFT through forward sensitivities (quadratic in n).
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct OracleArgs {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    hidden_dim: usize,
    #[arg(long = "T", default_value_t = 3)]
    T: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    #[arg(long, value_parser = serde_name::<Activation>, default_value = "tanh")]
    activation: Activation,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_gen(kind: GenKind) -> Result<()> {
    let (ds, out) = match kind {
        GenKind::ToyLongrange {
            T,
            classes,
            label_snapshot,
            seed,
            out,
        } => (gen_toy_longrange(T, classes, label_snapshot, seed)?, out),
        GenKind::ToyBinary { T, seed, out } => (gen_toy_binary(T, seed)?, out),
        GenKind::Synthetic {
            n,
            T,
            l,
            degree,
            classes,
            graphs,
            seed,
            out,
        } => (
            gen_synthetic(&SyntheticSpec {
                n,
                T,
                l,
                avg_degree: degree,
                num_classes: classes,
                N: graphs,
                seed,
            })?,
            out,
        ),
    };
    save_dataset(&ds, &out).with_context(|| format!("writing dataset to {}", out.display()))?;
    print_json(&Manifest::for_dataset(&ds))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = apply_overrides(base, &args)?;
    if cfg.out_dir.is_none() {
        bail!("no output directory: pass --out or set out_dir in the config");
    }
    let outcome = run_experiment(&cfg)?;
    let last = outcome.log.last();
    log::info!(
        "trained {} steps, final loss {:?}, best epoch {}",
        outcome.log.len(),
        last.map(|s| s.loss),
        outcome.best_epoch
    );
    print_json(&outcome.metrics)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = SavedModel::load(&args.params)?;
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &args.data {
        cfg.data = Some(DataSource::Path { path: p.clone() });
    }
    let (ds, split) = cfg.prepare()?;
    let (split, portion) = match args.portion.as_str() {
        "all" => (DatasetSplit::all_train(&ds), Portion::Train),
        p => (split, serde_name::<Portion>(p).map_err(anyhow::Error::msg)?),
    };
    let graph = ds
        .graphs
        .get(args.graph)
        .with_context(|| format!("graph {} out of range ({} graphs)", args.graph, ds.graphs.len()))?;
    let z = model.embeddings(graph, &cfg.fixed_point)?;
    let mut metrics = MetricsFile::new();
    if let Some(e) = evaluate(&model, &ds, &split, portion, &cfg.fixed_point)? {
        metrics.insert(args.portion.clone(), e);
    } else {
        log::warn!("portion {} has no labeled nodes", args.portion);
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    write(&args.out.join("embeddings.csv"), &embeddings_csv(&z))?;
    print_json(&metrics)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        sizes: args.sizes,
        hidden_dim: args.hidden_dim,
        T: args.T,
        l: args.l,
        graphs: args.graphs,
        avg_degree: args.degree,
        repeats: args.repeats,
        oracle: args.oracle,
        fixed_point: FixedPointConfig::default(),
        seed: args.seed,
    };
    let report = run_bench(&cfg)?;
    report.write(&args.out)?;
    let mut out = std::io::stdout().lock();
    for m in &report.medians {
        writeln!(out, "{},{},{}", m.optimizer.name(), m.n, m.median_seconds_per_window)?;
    }
    for (opt, slope) in &report.slopes {
        writeln!(out, "slope {} {slope:.3}", opt.name())?;
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let report = oracle_check(&OracleConfig {
        n: args.n,
        hidden_dim: args.hidden_dim,
        T: args.T,
        l: args.l,
        activation: args.activation,
        tolerance: args.tolerance,
        seed: args.seed,
        ..OracleConfig::default()
    })?;
    print_json(&report)?;
    if !report.pass {
        bail!(
            "gradient paths disagree: max relative error {:.3e} (tolerance {:.1e}, kink-free {})",
            report.max_error(),
            report.tolerance,
            report.kink_free
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { kind } => cmd_gen(kind),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
