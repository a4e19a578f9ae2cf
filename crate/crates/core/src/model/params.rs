use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// Element-wise non-expansive activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative; `relu'(0)` is taken as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

/// Which layer weights are tied across snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSharing {
    /// One `W` per snapshot, one shared `V`.
    #[default]
    ShareV,
    /// A single `W` and a single `V`.
    ShareBoth,
    /// One `W` and one `V` per snapshot.
    NotShare,
}

impl WeightSharing {
    fn shares_w(self) -> bool {
        matches!(self, WeightSharing::ShareBoth)
    }

    fn shares_v(self) -> bool {
        !matches!(self, WeightSharing::NotShare)
    }
}

/// Dimensions and structure of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub output_dim: usize,
    pub num_snapshots: usize,
    pub activation: Activation,
    pub sharing: WeightSharing,
}

/// Affine prediction head `θ_w · z + θ_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Layer weights `W^t` (d×d), input maps `V` (d×l) and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdgnnParams {
    pub w: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub head: Head,
    pub activation: Activation,
    pub sharing: WeightSharing,
    pub num_snapshots: usize,
}

impl IdgnnParams {
    /// Zero weights of the given shape.
    pub fn zeros(shape: &ModelShape) -> Self {
        let d = shape.hidden_dim;
        let nw = if shape.sharing.shares_w() { 1 } else { shape.num_snapshots };
        let nv = if shape.sharing.shares_v() { 1 } else { shape.num_snapshots };
        IdgnnParams {
            w: vec![DenseMatrix::zeros(d, d); nw],
            v: vec![DenseMatrix::zeros(d, shape.feature_dim); nv],
            head: Head {
                weight: DenseMatrix::zeros(shape.output_dim, d),
                bias: vec![0.0; shape.output_dim],
            },
            activation: shape.activation,
            sharing: shape.sharing,
            num_snapshots: shape.num_snapshots,
        }
    }

    /// Entries drawn uniformly from `[-a, a]`, `a = 0.5/√d`; biases zero.
    /// Callers project the result before use.
    pub fn init(shape: &ModelShape, seed: u64) -> Self {
        let mut p = Self::zeros(shape);
        let a = 0.5 / (shape.hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut DenseMatrix| {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-a..=a));
        };
        p.w.iter_mut().for_each(&mut fill);
        p.v.iter_mut().for_each(&mut fill);
        fill(&mut p.head.weight);
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.w[0].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.v[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.head.weight.rows()
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            hidden_dim: self.hidden_dim(),
            feature_dim: self.feature_dim(),
            output_dim: self.output_dim(),
            num_snapshots: self.num_snapshots,
            activation: self.activation,
            sharing: self.sharing,
        }
    }

    /// Index into `w` used by snapshot `t` (zero-based).
    #[inline]
    pub fn w_slot(&self, t: usize) -> usize {
        if self.w.len() == 1 {
            0
        } else {
            t
        }
    }

    #[inline]
    pub fn v_slot(&self, t: usize) -> usize {
        if self.v.len() == 1 {
            0
        } else {
            t
        }
    }

    #[inline]
    pub fn w_for(&self, t: usize) -> &DenseMatrix {
        &self.w[self.w_slot(t)]
    }

    #[inline]
    pub fn v_for(&self, t: usize) -> &DenseMatrix {
        &self.v[self.v_slot(t)]
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(DenseMatrix::is_finite)
            && self.v.iter().all(DenseMatrix::is_finite)
            && self.head.weight.is_finite()
            && self.head.bias.iter().all(|b| b.is_finite())
    }

    /// Checks that the parameters fit a graph with `T` snapshots and `l` features.
    #[allow(non_snake_case)]
    pub fn check_graph(&self, T: usize, l: usize) -> Result<()> {
        let w_ok = self.w.len() == 1 || self.w.len() == T;
        let v_ok = self.v.len() == 1 || self.v.len() == T;
        if self.num_snapshots != T || !w_ok || !v_ok || self.feature_dim() != l {
            return Err(Error::dims(
                "IdgnnParams",
                format!(
                    "parameters for T={} l={} used on a graph with T={T} l={l}",
                    self.num_snapshots,
                    self.feature_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Gradient step `p ← p − lr·g` on every block selected by `which`.
    pub fn descend(&mut self, grads: &ParamGradients, lr: f64, which: ParamBlocks) {
        if which.omega {
            for (w, g) in self.w.iter_mut().zip(&grads.w) {
                w.axpy(-lr, g);
            }
            for (v, g) in self.v.iter_mut().zip(&grads.v) {
                v.axpy(-lr, g);
            }
        }
        if which.head {
            self.head.weight.axpy(-lr, &grads.head_weight);
            for (b, g) in self.head.bias.iter_mut().zip(&grads.head_bias) {
                *b -= lr * g;
            }
        }
    }

    /// Layer weights and input maps flattened in a fixed order (`W` slots, then `V` slots).
    pub fn omega_to_vec(&self) -> Vec<f64> {
        self.w
            .iter()
            .chain(&self.v)
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_omega_from_vec(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for m in self.w.iter_mut().chain(self.v.iter_mut()) {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// Selects parameter groups for an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlocks {
    pub omega: bool,
    pub head: bool,
}

impl ParamBlocks {
    pub const ALL: ParamBlocks = ParamBlocks {
        omega: true,
        head: true,
    };
    pub const OMEGA: ParamBlocks = ParamBlocks {
        omega: true,
        head: false,
    };
    pub const HEAD: ParamBlocks = ParamBlocks {
        omega: false,
        head: true,
    };
}

/// Gradients shaped like [`IdgnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub w: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub head_weight: DenseMatrix,
    pub head_bias: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros_like(p: &IdgnnParams) -> Self {
        ParamGradients {
            w: p.w.iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect(),
            v: p.v.iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect(),
            head_weight: DenseMatrix::zeros(p.head.weight.rows(), p.head.weight.cols()),
            head_bias: vec![0.0; p.head.bias.len()],
        }
    }

    /// Zeros with the shapes of `other`.
    pub fn zeros_like_grads(other: &ParamGradients) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        ParamGradients {
            w: other.w.iter().map(z).collect(),
            v: other.v.iter().map(z).collect(),
            head_weight: z(&other.head_weight),
            head_bias: vec![0.0; other.head_bias.len()],
        }
    }

    fn matrices(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.w.iter().chain(&self.v).chain(std::iter::once(&self.head_weight))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamGradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            a.axpy(alpha, b);
        }
        for (a, b) in self.v.iter_mut().zip(&other.v) {
            a.axpy(alpha, b);
        }
        self.head_weight.axpy(alpha, &other.head_weight);
        for (a, b) in self.head_bias.iter_mut().zip(&other.head_bias) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.w.iter_mut().for_each(|m| m.scale(alpha));
        self.v.iter_mut().for_each(|m| m.scale(alpha));
        self.head_weight.scale(alpha);
        self.head_bias.iter_mut().for_each(|b| *b *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.matrices()
            .map(DenseMatrix::max_abs)
            .chain(self.head_bias.iter().map(|b| b.abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(DenseMatrix::is_finite) && self.head_bias.iter().all(|b| b.is_finite())
    }

    /// `W` and `V` blocks flattened in the order of [`IdgnnParams::omega_to_vec`].
    pub fn omega_to_vec(&self) -> Vec<f64> {
        self.w
            .iter()
            .chain(&self.v)
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Drops the head part, keeping only `W` and `V`.
    pub fn clear_head(&mut self) {
        self.head_weight.scale(0.0);
        self.head_bias.iter_mut().for_each(|b| *b = 0.0);
    }
}
