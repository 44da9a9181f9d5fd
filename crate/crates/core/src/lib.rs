//! Correlative information maximization (CorInfoMax) networks.
//!
//! A CorInfoMax network stacks layers whose activations live in a polytope
//! (the nonnegative unit hypercube or the nonnegative ℓ1 ball). Every
//! segment carries an independent feedforward predictor `W_ff` and feedback
//! predictor `W_fb`, and every layer keeps a running inverse correlation
//! matrix `B` that acts as its lateral connectivity. Inference runs
//! projected-gradient neural dynamics to equilibrium. Learning contrasts a
//! free phase with a phase weakly nudged toward the label.
//!
//! ```no_run
//! use corinfomax::{RunConfig, trainer::{train, TrainOptions}};
//!
//! let cfg = RunConfig::from_toml_file("configs/mnist_hypercube.toml")?;
//! let summary = train(&cfg, &TrainOptions::new("runs/mnist"))?;
//! println!("test top-1 {:.4}", summary.final_test.top1);
//! # Ok::<(), corinfomax::Error>(())
//! ```

use std::fmt::{Debug, Display};

use ndarray::NdFloat;

pub mod checkpoint;
pub mod config;
pub mod corrinfo;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod learning;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod trainer;

pub use config::{
    DatasetConfig, DatasetKind, DecayRule, InverseUpdate, NetworkConfig, Polytope, Precision, RunConfig, StepSchedule,
};
pub use corrinfo::{CorrelationInverse, SampleCorrelation};
pub use data::{Batch, Dataset, Split};
pub use dynamics::{ActivationState, PhaseResult};
pub use error::{Error, Result};
pub use learning::{BatchMetrics, TrainSchedule};
pub use metrics::{Accuracy, MetricRecord};
pub use network::{LateralDecomposition, SynapticState};

/// Floating-point type the network can run in.
pub trait Real: NdFloat + Default + Display + Debug {
    const NAME: &'static str;
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
