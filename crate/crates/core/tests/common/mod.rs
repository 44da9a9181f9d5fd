#![allow(dead_code)]

pub mod verify;

use std::path::PathBuf;

use corinfomax::config::{DatasetKind, DecayRule, InverseUpdate, NetworkConfig, Polytope, Precision, StepSchedule};
use corinfomax::{Dataset, Split};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dataset root: `CORINFOMAX_DATA_DIR` or `<workspace>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("CORINFOMAX_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Directory holding the files of `kind`, if they are present.
pub fn dataset_dir(kind: DatasetKind) -> Option<PathBuf> {
    let (sub, probe) = match kind {
        DatasetKind::Mnist => ("mnist", "t10k-labels-idx1-ubyte"),
        DatasetKind::FashionMnist => ("fashion", "t10k-labels-idx1-ubyte"),
        DatasetKind::Cifar10 => ("cifar-10-batches-bin", "test_batch.bin"),
        DatasetKind::Cifar100 => ("cifar-100-binary", "test.bin"),
    };
    let dir = data_root().join(sub);
    (dir.join(probe).exists() || dir.join(format!("{probe}.gz")).exists()).then_some(dir)
}

pub fn full_runs_enabled() -> bool {
    std::env::var("CORINFOMAX_FULL").is_ok_and(|v| v == "1")
}

pub fn toy_config(sizes: &[usize], polytope: Polytope) -> NetworkConfig {
    let p = sizes.len() - 1;
    NetworkConfig {
        layer_sizes: sizes.to_vec(),
        polytope: vec![polytope; p],
        epsilon: vec![0.5; p],
        lambda_r: 0.99,
        g_leak: vec![0.3; p],
        beta_prime: 0.5,
        tau_u: 1.0,
        t_free: 60,
        t_nudged: 20,
        mu_u_schedule: StepSchedule::Constant { value: 0.05 },
        mu_a_schedule: if polytope == Polytope::NonnegL1Ball {
            vec![StepSchedule::Constant { value: 0.2 }; p]
        } else {
            Vec::new()
        },
        mu_ff: vec![0.1; p],
        mu_fb: vec![0.1; p - 1],
        lr_decay: DecayRule::default(),
        batch_size: 4,
        seed: 7,
        precision: Precision::F64,
        deterministic: true,
        weight_decay: false,
        inverse_update: InverseUpdate::Verbatim,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// `A Aᵀ / n + shift·I` for a random `n × n` matrix `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Array2<f64> {
    let a = random_matrix(rng, n, n + 2, 1.0);
    a.dot(&a.t()) / n as f64 + Array2::<f64>::eye(n) * shift
}

/// Class prototypes in `[0, 1]^dim` plus uniform noise.
pub fn synthetic_dataset(n: usize, dim: usize, classes: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut images = Array2::<f64>::zeros((dim, n).f());
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = j % classes;
        for i in 0..dim {
            let v: f64 = protos[c][i] * 0.8 + rng.random_range(0.0..0.2);
            images[[i, j]] = v;
        }
        labels.push(c);
    }
    Dataset {
        images,
        labels,
        num_classes: classes,
        split,
    }
}

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn column(a: &Array2<f64>, j: usize) -> DVector<f64> {
    DVector::from_iterator(a.nrows(), a.column(j).iter().copied())
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
