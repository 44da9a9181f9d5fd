use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::corrinfo::CorrelationInverse;
use crate::error::{Error, Result};
use crate::Real;

/// All learnable state of a network.
///
/// `w_ff[k]` maps layer `k` to layer `k+1` for `k = 0..P`. Feedback exists only
/// for segments `1..P` and is stored at `w_fb[k - 1]`; the output layer's
/// feedback is the identity and is not stored. `lateral[k - 1]` holds the
/// inverse correlation of layer `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynapticState<F: Real = f64> {
    pub w_ff: Vec<Array2<F>>,
    pub w_fb: Vec<Array2<F>>,
    pub lateral: Vec<CorrelationInverse<F>>,
}

impl<F: Real> SynapticState<F> {
    pub fn depth(&self) -> usize {
        self.w_ff.len()
    }

    /// Feedback weights of segment `k` (`1 ≤ k < P`), shape `N_k × N_{k+1}`.
    pub fn w_fb(&self, k: usize) -> &Array2<F> {
        &self.w_fb[k - 1]
    }

    pub fn lateral(&self, k: usize) -> &CorrelationInverse<F> {
        &self.lateral[k - 1]
    }

    pub fn check_shapes(&self, cfg: &NetworkConfig) -> Result<()> {
        let n = &cfg.layer_sizes;
        let p = cfg.depth();
        if self.w_ff.len() != p || self.w_fb.len() != p - 1 || self.lateral.len() != p {
            return Err(Error::Shape(format!(
                "state has {}/{}/{} matrices, config describes {p} layers",
                self.w_ff.len(),
                self.w_fb.len(),
                self.lateral.len()
            )));
        }
        for k in 0..p {
            if self.w_ff[k].dim() != (n[k + 1], n[k]) {
                return Err(Error::Shape(format!("w_ff[{k}] is {:?}", self.w_ff[k].dim())));
            }
            if self.lateral[k].b.dim() != (n[k + 1], n[k + 1]) {
                return Err(Error::Shape(format!(
                    "lateral[{}] is {:?}",
                    k + 1,
                    self.lateral[k].b.dim()
                )));
            }
        }
        for k in 1..p {
            if self.w_fb(k).dim() != (n[k], n[k + 1]) {
                return Err(Error::Shape(format!("w_fb[{k}] is {:?}", self.w_fb(k).dim())));
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> SynapticState<G> {
        let conv = |m: &Array2<F>| m.mapv(|v| G::of(v.as_f64()));
        SynapticState {
            w_ff: self.w_ff.iter().map(conv).collect(),
            w_fb: self.w_fb.iter().map(conv).collect(),
            lateral: self
                .lateral
                .iter()
                .map(|c| CorrelationInverse {
                    dim: c.dim,
                    b: conv(&c.b),
                    epsilon: c.epsilon,
                    lambda: c.lambda,
                    gamma: c.gamma,
                    mode: c.mode,
                })
                .collect(),
        }
    }
}

fn uniform_matrix<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || F::of(rng.random_range(-a..a)))
}

/// Seeded initialization: predictors i.i.d. uniform on `±sqrt(6/(fan_in+fan_out))`,
/// lateral inverses at the identity.
pub fn init_network<F: Real>(cfg: &NetworkConfig) -> Result<SynapticState<F>> {
    cfg.validate()?;
    let n = &cfg.layer_sizes;
    let p = cfg.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w_ff = (0..p).map(|k| uniform_matrix(&mut rng, n[k + 1], n[k])).collect();
    let w_fb = (1..p).map(|k| uniform_matrix(&mut rng, n[k], n[k + 1])).collect();
    let lateral = (1..=p)
        .map(|k| {
            CorrelationInverse::new(n[k], cfg.epsilon[k - 1], cfg.lambda_r).map(|c| c.with_mode(cfg.inverse_update))
        })
        .collect::<Result<_>>()?;
    Ok(SynapticState { w_ff, w_fb, lateral })
}

/// Leak, apical and basal conductances of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conductances {
    pub leak: f64,
    pub apical: f64,
    pub basal: f64,
}

/// Hidden layers couple to the segment above through `1/ε_k` and to the
/// segment below through `1/ε_{k-1}`. The output layer's apical conductance
/// is the nudging strength of the current phase.
pub fn conductances(cfg: &NetworkConfig, k: usize, beta: f64) -> Conductances {
    let p = cfg.depth();
    let basal = 1.0 / cfg.epsilon[k - 1];
    let apical = if k == p { beta } else { 1.0 / cfg.epsilon[k] };
    Conductances {
        leak: cfg.g_leak[k - 1],
        apical,
        basal,
    }
}

/// Lateral weight matrix of layer `k`.
///
/// Hidden: `ε_k(2γB + g_l I)`. Output: `β′⁻¹(γB + g_l I)`.
pub fn m_matrix<F: Real>(k: usize, state: &SynapticState<F>, cfg: &NetworkConfig) -> Result<Array2<F>> {
    let p = cfg.depth();
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!("layer {k} outside 1..={p}")));
    }
    let b = &state.lateral(k).b;
    let gamma = cfg.gamma();
    let gl = cfg.g_leak[k - 1];
    let (scale, coupling) = if k < p {
        (cfg.epsilon[k], 2.0 * gamma)
    } else {
        if cfg.beta_prime == 0.0 {
            return Err(Error::InvalidArgument(
                "output lateral matrix is undefined for beta_prime = 0".into(),
            ));
        }
        (1.0 / cfg.beta_prime, gamma)
    };
    let mut m = b.mapv(|v| v * F::of(scale * coupling));
    m.diag_mut().mapv_inplace(|v| v + F::of(scale * gl));
    Ok(m)
}

/// Autapse diagonal `d` and lateral inhibition `o` with `M = diag(d) − o`.
#[derive(Clone, Debug, PartialEq)]
pub struct LateralDecomposition<F: Real = f64> {
    pub d: Array1<F>,
    pub o: Array2<F>,
}

impl<F: Real> LateralDecomposition<F> {
    pub fn reconstruct(&self) -> Array2<F> {
        let mut m = self.o.mapv(|v| -v);
        m.diag_mut().zip_mut_with(&self.d, |a, &b| *a = *a + b);
        m
    }
}

pub fn decompose_lateral<F: Real>(m: ArrayView2<F>) -> Result<LateralDecomposition<F>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "lateral matrix must be square, got {:?}",
            m.dim()
        )));
    }
    let d = m.diag().to_owned();
    let mut o = m.mapv(|v| -v);
    o.diag_mut().fill(F::zero());
    Ok(LateralDecomposition { d, o })
}
