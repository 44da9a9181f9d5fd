//! Declarative run and network configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polytope {
    NonnegUnitHypercube,
    NonnegL1Ball,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// How the lateral inverse absorbs a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseUpdate {
    /// `B ← λ⁻¹(B − γ mean(z zᵀ))`, no rank-one denominator.
    #[default]
    Verbatim,
    /// Sequential Sherman–Morrison updates.
    Exact,
}

/// Step size as a function of the iteration counter `s ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant {
        value: f64,
    },
    /// `max(a / (s·b + 1), floor)`
    Decaying {
        a: f64,
        b: f64,
        floor: f64,
    },
}

impl StepSchedule {
    pub fn at(&self, s: usize) -> f64 {
        match *self {
            StepSchedule::Constant { value } => value,
            StepSchedule::Decaying { a, b, floor } => (a / (s as f64 * b + 1.0)).max(floor),
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { value } => value > 0.0 && value.is_finite(),
            StepSchedule::Decaying { a, b, floor } => a > 0.0 && b >= 0.0 && floor >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(path, "step sizes must be positive"))
        }
    }
}

/// Per-epoch learning-rate multiplier: the first `(threshold, mult)` pair with
/// `epoch < threshold` applies, otherwise `otherwise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayRule {
    #[serde(default)]
    pub steps: Vec<(usize, f64)>,
    pub otherwise: f64,
}

impl Default for DecayRule {
    fn default() -> Self {
        Self {
            steps: Vec::new(),
            otherwise: 1.0,
        }
    }
}

impl DecayRule {
    pub fn multiplier(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .find(|(threshold, _)| epoch < *threshold)
            .map_or(self.otherwise, |&(_, m)| m)
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[N_0, ..., N_P]`
    pub layer_sizes: Vec<usize>,
    /// One entry per layer `1..=P`.
    pub polytope: Vec<Polytope>,
    /// One entry per segment `0..P`.
    pub epsilon: Vec<f64>,
    pub lambda_r: f64,
    /// One entry per layer `1..=P`.
    pub g_leak: Vec<f64>,
    pub beta_prime: f64,
    #[serde(default = "one")]
    pub tau_u: f64,
    pub t_free: usize,
    pub t_nudged: usize,
    pub mu_u_schedule: StepSchedule,
    /// One entry per layer `1..=P`; required when any layer is an ℓ1 ball.
    #[serde(default)]
    pub mu_a_schedule: Vec<StepSchedule>,
    /// One entry per segment `0..P`.
    pub mu_ff: Vec<f64>,
    /// One entry per segment `1..P` (no feedback into the input).
    pub mu_fb: Vec<f64>,
    #[serde(default)]
    pub lr_decay: DecayRule,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub deterministic: bool,
    /// Re-enables the `−μ ε_k W` regularization pull on predictor updates.
    #[serde(default)]
    pub weight_decay: bool,
    #[serde(default)]
    pub inverse_update: InverseUpdate,
}

impl NetworkConfig {
    /// Number of non-input layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn gamma(&self) -> f64 {
        (1.0 - self.lambda_r) / self.lambda_r
    }

    pub fn is_sparse(&self, layer: usize) -> bool {
        self.polytope[layer - 1] == Polytope::NonnegL1Ball
    }

    pub fn any_sparse(&self) -> bool {
        self.polytope.contains(&Polytope::NonnegL1Ball)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.depth();
        if p < 1 {
            return Err(Error::config(
                "network.layer_sizes",
                "need an input and at least one layer",
            ));
        }
        if let Some(i) = self.layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::config(
                format!("network.layer_sizes[{i}]"),
                "layer size must be positive",
            ));
        }
        let lens = [
            ("network.polytope", self.polytope.len(), p),
            ("network.epsilon", self.epsilon.len(), p),
            ("network.g_leak", self.g_leak.len(), p),
            ("network.mu_ff", self.mu_ff.len(), p),
            ("network.mu_fb", self.mu_fb.len(), p - 1),
        ];
        for (path, got, want) in lens {
            if got != want {
                return Err(Error::config(path, format!("expected {want} entries, got {got}")));
            }
        }
        let positive = |path: &str, vals: &[f64]| -> Result<()> {
            match vals.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                Some(i) => Err(Error::config(format!("{path}[{i}]"), "must be positive and finite")),
                None => Ok(()),
            }
        };
        positive("network.epsilon", &self.epsilon)?;
        positive("network.mu_ff", &self.mu_ff)?;
        positive("network.mu_fb", &self.mu_fb)?;
        if let Some(i) = self.g_leak.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config(format!("network.g_leak[{i}]"), "must be nonnegative"));
        }
        if !(self.lambda_r > 0.0 && self.lambda_r < 1.0) {
            return Err(Error::config("network.lambda_r", "must lie in (0, 1)"));
        }
        if !(self.beta_prime >= 0.0 && self.beta_prime.is_finite()) {
            return Err(Error::config("network.beta_prime", "must be nonnegative"));
        }
        if !(self.tau_u > 0.0) {
            return Err(Error::config("network.tau_u", "must be positive"));
        }
        if self.t_free == 0 {
            return Err(Error::config("network.t_free", "must be at least 1"));
        }
        if self.t_nudged == 0 {
            return Err(Error::config("network.t_nudged", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("network.batch_size", "must be at least 1"));
        }
        self.mu_u_schedule.validate("network.mu_u_schedule")?;
        if self.any_sparse() {
            if self.mu_a_schedule.len() != p {
                return Err(Error::config(
                    "network.mu_a_schedule",
                    format!(
                        "expected {p} entries for a sparse network, got {}",
                        self.mu_a_schedule.len()
                    ),
                ));
            }
            for (i, s) in self.mu_a_schedule.iter().enumerate() {
                s.validate(&format!("network.mu_a_schedule[{i}]"))?;
            }
        }
        for (i, &(_, m)) in self.lr_decay.steps.iter().enumerate() {
            if !(m > 0.0) {
                return Err(Error::config(
                    format!("network.lr_decay.steps[{i}]"),
                    "multiplier must be positive",
                ));
            }
        }
        if !(self.lr_decay.otherwise > 0.0) {
            return Err(Error::config(
                "network.lr_decay.otherwise",
                "multiplier must be positive",
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            DatasetKind::Mnist | DatasetKind::FashionMnist => 784,
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => 3072,
        }
    }
}

/// Per-channel normalization applied to CIFAR pixels after scaling to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ChannelNorm {
    fn default() -> Self {
        Self {
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
        }
    }
}

fn default_eval_batch() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    /// Use only the first `n` training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default)]
    pub normalization: ChannelNorm,
}

fn default_log_every() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    /// Batches between per-batch metric rows; 0 writes epoch rows only.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let n = &self.network.layer_sizes;
        let (input, output) = (n[0], n[n.len() - 1]);
        if input != self.dataset.kind.input_dim() {
            return Err(Error::config(
                "network.layer_sizes[0]",
                format!(
                    "{:?} inputs have {} features, got {input}",
                    self.dataset.kind,
                    self.dataset.kind.input_dim()
                ),
            ));
        }
        if output != self.dataset.kind.num_classes() {
            return Err(Error::config(
                format!("network.layer_sizes[{}]", n.len() - 1),
                format!(
                    "{:?} has {} classes, got {output}",
                    self.dataset.kind,
                    self.dataset.kind.num_classes()
                ),
            ));
        }
        if self.dataset.eval_batch_size == 0 {
            return Err(Error::config("dataset.eval_batch_size", "must be at least 1"));
        }
        if let Some(i) = self.dataset.normalization.std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::config(
                format!("dataset.normalization.std[{i}]"),
                "must be positive",
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved config, defaults included.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
        Self::from_toml_str(text)
    }
}

/// Bundled configurations for the published hyperparameter tables.
pub const PRESETS: &[(&str, &str)] = &[
    ("mnist_hypercube", include_str!("../../../configs/mnist_hypercube.toml")),
    (
        "fashion_mnist_hypercube",
        include_str!("../../../configs/fashion_mnist_hypercube.toml"),
    ),
    (
        "cifar10_hypercube",
        include_str!("../../../configs/cifar10_hypercube.toml"),
    ),
    (
        "mnist_hypercube_3layer",
        include_str!("../../../configs/mnist_hypercube_3layer.toml"),
    ),
    (
        "cifar10_hypercube_3layer",
        include_str!("../../../configs/cifar10_hypercube_3layer.toml"),
    ),
    (
        "cifar100_hypercube_3layer",
        include_str!("../../../configs/cifar100_hypercube_3layer.toml"),
    ),
    ("mnist_sparse", include_str!("../../../configs/mnist_sparse.toml")),
    (
        "fashion_mnist_sparse",
        include_str!("../../../configs/fashion_mnist_sparse.toml"),
    ),
    ("cifar10_sparse", include_str!("../../../configs/cifar10_sparse.toml")),
];

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().message().to_string())
    })
}
