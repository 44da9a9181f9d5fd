//! Brute-force reference implementations. Everything here works on nalgebra
//! matrices and plain loops so it shares no kernels with the engine.

use nalgebra::{DMatrix, DVector};

pub fn logdet_spd(m: &DMatrix<f64>) -> f64 {
    let l = m.clone().cholesky().expect("matrix is SPD").unpack();
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn inverse_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("matrix is SPD").inverse()
}

/// How the correlative entropy of each layer enters the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Entropy {
    /// `½ logdet(λR + (1−λ) r rᵀ + εI)` with `R` frozen.
    Exact,
    /// `−½ logdet B + (γ/2) rᵀBr` with `B` frozen.
    FrozenInverse,
}

/// Weights and frozen statistics of a network, layer `k` at index `k − 1`.
#[derive(Clone, Debug)]
pub struct FrozenNetwork {
    pub epsilon: Vec<f64>,
    pub lambda: f64,
    pub w_ff: Vec<DMatrix<f64>>,
    pub w_fb: Vec<DMatrix<f64>>,
    pub r_prev: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl FrozenNetwork {
    pub fn depth(&self) -> usize {
        self.w_ff.len()
    }

    fn gamma(&self) -> f64 {
        (1.0 - self.lambda) / self.lambda
    }

    /// ε values of the log-det terms attached to layer `k`.
    fn entropy_epsilons(&self, k: usize) -> Vec<f64> {
        if k < self.depth() {
            vec![self.epsilon[k - 1], self.epsilon[k]]
        } else {
            vec![self.epsilon[k - 1]]
        }
    }
}

/// One-sample activations: `x`, layers `1..=P`, target and nudge.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: DVector<f64>,
    pub r: Vec<DVector<f64>>,
    pub y: DVector<f64>,
    pub beta: f64,
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Layerwise objective `Σ_k J_k(r^(k))` with every prediction taken from the
/// neighbours in `anchor`, so `∂/∂r^(k)` only sees layer `k`'s own terms.
pub fn objective_value(net: &FrozenNetwork, s: &Sample, anchor: &Sample, mode: Entropy) -> f64 {
    let p = net.depth();
    let mut total = 0.0;
    for k in 1..=p {
        let r = &s.r[k - 1];
        let n = r.len();
        for eps in net.entropy_epsilons(k) {
            total += match mode {
                Entropy::Exact => {
                    let m = &net.r_prev[k - 1] * net.lambda
                        + r * r.transpose() * (1.0 - net.lambda)
                        + DMatrix::identity(n, n) * eps;
                    0.5 * logdet_spd(&m)
                }
                Entropy::FrozenInverse => {
                    let b = &net.b[k - 1];
                    -0.5 * logdet_spd(b) + 0.5 * net.gamma() * (r.transpose() * b * r)[(0, 0)]
                }
            };
        }
        let below = if k == 1 { &anchor.x } else { &anchor.r[k - 2] };
        total -= sq_dist(r, &(&net.w_ff[k - 1] * below)) / (2.0 * net.epsilon[k - 1]);
        if k < p {
            total -= sq_dist(r, &(&net.w_fb[k - 1] * &anchor.r[k])) / (2.0 * net.epsilon[k]);
        }
    }
    total - 0.5 * s.beta * sq_dist(&s.y, &s.r[p - 1])
}

/// Derivative of the exact log-det terms of layer `k` with respect to `r^(k)`.
pub fn exact_entropy_gradient(net: &FrozenNetwork, k: usize, r: &DVector<f64>) -> DVector<f64> {
    let n = r.len();
    let mut g = DVector::zeros(n);
    for eps in net.entropy_epsilons(k) {
        let m =
            &net.r_prev[k - 1] * net.lambda + r * r.transpose() * (1.0 - net.lambda) + DMatrix::identity(n, n) * eps;
        g += inverse_spd(&m) * r * (1.0 - net.lambda);
    }
    g
}

/// Central differences of [`objective_value`] around `s`, one per entry of
/// every layer.
pub fn finite_difference_gradient(net: &FrozenNetwork, s: &Sample, mode: Entropy, h: f64) -> Vec<DVector<f64>> {
    (0..net.depth())
        .map(|l| {
            DVector::from_iterator(
                s.r[l].len(),
                (0..s.r[l].len()).map(|i| {
                    let mut plus = s.clone();
                    let mut minus = s.clone();
                    plus.r[l][i] += h;
                    minus.r[l][i] -= h;
                    (objective_value(net, &plus, s, mode) - objective_value(net, &minus, s, mode)) / (2.0 * h)
                }),
            )
        })
        .collect()
}

/// Parameters of a network with one input, one hidden and one output unit,
/// both in the unit hypercube, in a phase with nudge `beta`.
#[derive(Clone, Copy, Debug)]
pub struct ScalarNetwork {
    pub x: f64,
    pub w_ff: [f64; 2],
    pub w_fb: f64,
    pub b: [f64; 2],
    pub epsilon: [f64; 2],
    pub g_leak: [f64; 2],
    pub lambda: f64,
    pub beta: f64,
    pub y: f64,
}

fn clip(u: f64) -> f64 {
    u.clamp(0.0, 1.0)
}

/// Root of a strictly decreasing function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) >= 0.0 && f(hi) <= 0.0, "bracket does not straddle a root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

impl ScalarNetwork {
    fn gamma(&self) -> f64 {
        (1.0 - self.lambda) / self.lambda
    }

    /// Output drift as a function of its own potential, hidden rate fixed.
    fn output_residual(&self, u2: f64, r1: f64) -> f64 {
        let g_b = 1.0 / self.epsilon[1];
        let r2 = clip(u2);
        self.gamma() * self.b[1] * r2 + g_b * self.w_ff[1] * r1 + self.g_leak[1] * (r2 - u2)
            - self.beta * (r2 - self.y)
            - (self.beta + g_b) * u2
    }

    fn output_equilibrium(&self, r1: f64) -> f64 {
        bisect(|u| self.output_residual(u, r1), -1e3, 1e3)
    }

    fn hidden_residual(&self, u1: f64) -> f64 {
        let (g_a, g_b) = (1.0 / self.epsilon[1], 1.0 / self.epsilon[0]);
        let r1 = clip(u1);
        let r2 = clip(self.output_equilibrium(r1));
        2.0 * self.gamma() * self.b[0] * r1
            + g_a * self.w_fb * r2
            + g_b * self.w_ff[0] * self.x
            + self.g_leak[0] * (r1 - u1)
            - (g_a + g_b) * u1
    }
}

/// Equilibrium `(u1, u2)` by nested bisection: the output potential is
/// solved for each candidate hidden potential.
pub fn scalar_fixed_point_oracle(net: &ScalarNetwork) -> (f64, f64) {
    let u1 = bisect(|u| net.hidden_residual(u), -1e3, 1e3);
    (u1, net.output_equilibrium(clip(u1)))
}

/// `(λ^t B₀⁻¹ + (1−λ) Σ_i λ^{t−i} r_i r_iᵀ)⁻¹`, the matrix the rank-one
/// inverse recursion tracks, for columns `r_i` of `stream`.
pub fn recursion_inverse_oracle(b0: &DMatrix<f64>, stream: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let t = stream.ncols() as i32;
    let mut acc = inverse_spd(b0) * lambda.powi(t);
    for i in 0..stream.ncols() {
        let r = stream.column(i);
        acc += r * r.transpose() * ((1.0 - lambda) * lambda.powi(t - 1 - i as i32));
    }
    inverse_spd(&acc)
}

/// Regularized least-squares predictor `((Rx + εI)⁻¹ Rxy)ᵀ` from raw sums.
pub fn ridge_predictor(x: &DMatrix<f64>, y: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let n = x.ncols() as f64;
    let rx = x * x.transpose() / n;
    let rxy = x * y.transpose() / n;
    let d = rx.nrows();
    (inverse_spd(&(rx + DMatrix::identity(d, d) * epsilon)) * rxy).transpose()
}

/// CMI through the backward form computed with explicit inverses.
pub fn cmi_backward_reference(rx: &DMatrix<f64>, ry: &DMatrix<f64>, rxy: &DMatrix<f64>, eps: f64) -> f64 {
    let n = rx.nrows();
    let i = DMatrix::identity(n, n);
    let m = ry.nrows();
    let schur = rx - rxy * inverse_spd(&(ry + DMatrix::identity(m, m) * eps)) * rxy.transpose();
    0.5 * logdet_spd(&(rx + &i * eps)) - 0.5 * logdet_spd(&(schur + i * eps))
}
