use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bilevel::BilevelConfig;
use crate::data::{
    gen_synthetic, gen_toy_binary, gen_toy_longrange, load_dataset, normalize_01, split, Dataset, DatasetSplit,
    SplitMode, SyntheticSpec, TaskKind, TOY_NODES,
};
use crate::error::{Error, Result};
use crate::grad::GradMode;
use crate::model::{Activation, FixedPointConfig, ModelShape, WeightSharing, DEFAULT_KAPPA};

/// Where the dynamic graphs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[allow(non_snake_case)]
pub enum DataSource {
    /// A dataset directory in the on-disk format.
    Path { path: PathBuf },
    ToyLongrange {
        T: usize,
        #[serde(default = "default_toy_classes")]
        num_classes: usize,
        #[serde(default = "one")]
        label_snapshot: usize,
        #[serde(default = "one_u64")]
        seed: u64,
    },
    ToyBinary {
        T: usize,
        #[serde(default = "one_u64")]
        seed: u64,
    },
    Synthetic(SyntheticSpec),
}

fn default_toy_classes() -> usize {
    TOY_NODES
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Path { path } => load_dataset(path),
            DataSource::ToyLongrange {
                T,
                num_classes,
                label_snapshot,
                seed,
            } => gen_toy_longrange(*T, *num_classes, *label_snapshot, *seed),
            DataSource::ToyBinary { T, seed } => gen_toy_binary(*T, *seed),
            DataSource::Synthetic(spec) => gen_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Gradient descent with gradients through the fixed point.
    SgdIft,
    /// The single-loop multi-block bilevel method.
    #[default]
    Bilevel,
    /// One pass through the snapshots from zero, trained by backpropagation.
    NoLoop,
}

/// How nodes or graphs are divided for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::Transductive,
            ratios: (0.7, 0.1, 0.2),
            seed: 0,
        }
    }
}

/// Complete description of one training run. `run.json` is this struct after
/// all overrides are applied, so it can be passed back in to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<DataSource>,
    /// Expected task kind; checked against the dataset when set.
    pub task: Option<TaskKind>,
    /// `None` trains and evaluates on every labeled node.
    pub split: Option<SplitConfig>,
    /// Apply 0-1 normalization fitted on the training portion.
    pub normalize: bool,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub sharing: WeightSharing,
    pub kappa: f64,
    pub optimizer: OptimizerKind,
    /// Gradient path of `sgd-ift`.
    pub grad_mode: GradMode,
    /// Step size for parameters (`η₀` for the bilevel method).
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Start the bilevel block states from small random values instead of zero.
    pub random_init: bool,
    pub fixed_point: FixedPointConfig,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Seed for parameter initialization and batch order.
    pub seed: u64,
    /// Zero the `wall_ms` column so logs are byte-identical across runs.
    pub deterministic: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let b = BilevelConfig::default();
        ExperimentConfig {
            data: None,
            task: None,
            split: None,
            normalize: false,
            hidden_dim: 16,
            activation: Activation::Relu,
            sharing: WeightSharing::ShareV,
            kappa: DEFAULT_KAPPA,
            optimizer: OptimizerKind::Bilevel,
            grad_mode: GradMode::Adjoint,
            eta0: b.eta0,
            eta1: b.eta1,
            eta2: b.eta2,
            gamma: b.gamma,
            epochs: 100,
            batch_size: b.batch_size,
            random_init: b.random_init,
            fixed_point: FixedPointConfig::default(),
            eval_every: 1,
            seed: 0,
            deterministic: false,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta0 must be a finite non-negative number, got {}", self.eta0)));
        }
        if let Some(DataSource::Path { path }) = &self.data {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()));
            }
        }
        self.fixed_point.validate()?;
        self.bilevel().validate()
    }

    pub fn bilevel(&self) -> BilevelConfig {
        BilevelConfig {
            eta0: self.eta0,
            eta1: self.eta1,
            eta2: self.eta2,
            gamma: self.gamma,
            batch_size: self.batch_size,
            random_init: self.random_init,
        }
    }

    /// Loads the dataset, checks the task and builds the split. Normalization,
    /// when enabled, is fitted on the training portion.
    pub fn prepare(&self) -> Result<(Dataset, DatasetSplit)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no dataset given".into()))?;
        let ds = data.load()?;
        if let Some(kind) = &self.task {
            let actual = crate::data::Manifest::for_dataset(&ds).task;
            if *kind != actual {
                return Err(Error::InvalidArgument(format!(
                    "config expects a {kind:?} task but the dataset is {actual:?}"
                )));
            }
        }
        let sp = match &self.split {
            Some(s) => split(&ds, s.mode, s.ratios, s.seed)?,
            None => DatasetSplit::all_train(&ds),
        };
        let ds = if self.normalize { normalize_01(&ds, Some(&sp)) } else { ds };
        Ok((ds, sp))
    }

    pub fn model_shape(&self, ds: &Dataset) -> ModelShape {
        ModelShape {
            hidden_dim: self.hidden_dim,
            feature_dim: ds.feature_dim(),
            output_dim: ds.task.output_dim(),
            num_snapshots: ds.num_snapshots(),
            activation: self.activation,
            sharing: self.sharing,
        }
    }
}
