//! Correlation statistics, correlative entropy and mutual information, and
//! the running inverse-correlation recursion used as lateral connectivity.

use std::f64::consts::{E, PI};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2};

use crate::config::InverseUpdate;
use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, cholesky, cholesky_solve, logdet_psd, mean_outer, spd_inverse, symmetrize};
use crate::Real;

/// `½ log det(R + εI) + (m/2) log(2πe)` in nats.
pub fn corr_entropy(r: ArrayView2<f64>, epsilon: f64) -> Result<f64> {
    let m = r.nrows() as f64;
    let ld = logdet_psd(add_diagonal(r, epsilon).view())?;
    Ok(0.5 * ld + 0.5 * m * (2.0 * PI * E).ln())
}

fn check_joint(rx: &ArrayView2<f64>, ry: &ArrayView2<f64>, rxy: &ArrayView2<f64>) -> Result<()> {
    let (m, n) = rxy.dim();
    if rx.dim() != (m, m) || ry.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "Rx {:?}, Ry {:?} and Rxy {:?} are not conformable",
            rx.dim(),
            ry.dim(),
            rxy.dim()
        )));
    }
    Ok(())
}

/// Correlative mutual information through the forward (x → y) prediction
/// error: `½ log det(Ry+εI) − ½ log det(Ry − Rxyᵀ(Rx+εI)⁻¹Rxy + εI)`.
pub fn cmi_forward(rx: ArrayView2<f64>, ry: ArrayView2<f64>, rxy: ArrayView2<f64>, epsilon: f64) -> Result<f64> {
    check_joint(&rx, &ry, &rxy)?;
    let l = cholesky(add_diagonal(rx, epsilon).view())?;
    let solved = cholesky_solve(&l, rxy)?;
    let mut err = &ry - &rxy.t().dot(&solved);
    symmetrize(&mut err);
    Ok(0.5 * logdet_psd(add_diagonal(ry, epsilon).view())?
        - 0.5 * logdet_psd(add_diagonal(err.view(), epsilon).view())?)
}

/// Mirror of [`cmi_forward`] through the backward (y → x) prediction error.
pub fn cmi_backward(rx: ArrayView2<f64>, ry: ArrayView2<f64>, rxy: ArrayView2<f64>, epsilon: f64) -> Result<f64> {
    check_joint(&rx, &ry, &rxy)?;
    let l = cholesky(add_diagonal(ry, epsilon).view())?;
    let solved = cholesky_solve(&l, rxy.t())?;
    let mut err = &rx - &rxy.dot(&solved);
    symmetrize(&mut err);
    Ok(0.5 * logdet_psd(add_diagonal(rx, epsilon).view())?
        - 0.5 * logdet_psd(add_diagonal(err.view(), epsilon).view())?)
}

/// Gap between `log det(Re + εI)` and its first-order expansion around `εI`.
pub fn taylor_gap(re: ArrayView2<f64>, epsilon: f64) -> Result<f64> {
    let m = re.nrows() as f64;
    let exact = logdet_psd(add_diagonal(re, epsilon).view())?;
    let linear = re.diag().sum() / epsilon + m * epsilon.ln();
    Ok((exact - linear).abs())
}

/// Normalized exponentially weighted correlation estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCorrelation {
    pub dim: usize,
    pub r: Array2<f64>,
    pub lambda: f64,
    pub count: u64,
}

impl SampleCorrelation {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0, 1)")));
        }
        Ok(Self {
            dim,
            r: Array2::zeros((dim, dim)),
            lambda,
            count: 0,
        })
    }

    /// One weighted step using the batch-mean outer product of the columns.
    pub fn absorb(&mut self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.nrows() != self.dim || batch.ncols() == 0 {
            return Err(Error::Shape(format!(
                "batch {:?} does not match correlation dimension {}",
                batch.dim(),
                self.dim
            )));
        }
        let c = mean_outer(batch, batch);
        let lam = self.lambda;
        let t = (self.count + 1) as f64;
        let prev_mass = 1.0 - lam.powf(t - 1.0);
        let mass = 1.0 - lam.powf(t);
        self.r = (&self.r * (lam * prev_mass) + &c * (1.0 - lam)) / mass;
        symmetrize(&mut self.r);
        self.count += 1;
        Ok(())
    }
}

pub fn absorb_sample_batch(mut s: SampleCorrelation, batch: ArrayView2<f64>) -> Result<SampleCorrelation> {
    s.absorb(batch)?;
    Ok(s)
}

/// Running `B ≈ (R̂ + εI)⁻¹` for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationInverse<F: Real = f64> {
    pub dim: usize,
    pub b: Array2<F>,
    pub epsilon: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub mode: InverseUpdate,
}

impl<F: Real> CorrelationInverse<F> {
    pub fn new(dim: usize, epsilon: f64, lambda: f64) -> Result<Self> {
        Self::with_initial(Array2::eye(dim), epsilon, lambda)
    }

    pub fn with_initial(b: Array2<F>, epsilon: f64, lambda: f64) -> Result<Self> {
        let (r, c) = b.dim();
        if r != c || r == 0 {
            return Err(Error::Shape(format!("initial inverse must be square, got {r}x{c}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
        }
        Ok(Self {
            dim: r,
            b,
            epsilon,
            lambda,
            gamma: (1.0 - lambda) / lambda,
            mode: InverseUpdate::Verbatim,
        })
    }

    pub fn with_mode(mut self, mode: InverseUpdate) -> Self {
        self.mode = mode;
        self
    }

    /// Absorbs one batch of rates (columns) into `B`.
    pub fn update(&mut self, rates: ArrayView2<F>) -> Result<()> {
        if rates.nrows() != self.dim || rates.ncols() == 0 {
            return Err(Error::Shape(format!(
                "rates {:?} do not match inverse dimension {}",
                rates.dim(),
                self.dim
            )));
        }
        match self.mode {
            InverseUpdate::Verbatim => self.update_verbatim(rates),
            InverseUpdate::Exact => self.update_exact(rates),
        }
        symmetrize(&mut self.b);
        Ok(())
    }

    fn update_verbatim(&mut self, rates: ArrayView2<F>) {
        let z = self.b.dot(&rates);
        let n = rates.ncols() as f64;
        let alpha = F::of(-self.gamma / (n * self.lambda));
        let beta = F::of(1.0 / self.lambda);
        general_mat_mul(alpha, &z, &z.t(), beta, &mut self.b);
    }

    fn update_exact(&mut self, rates: ArrayView2<F>) {
        let c = (1.0 - self.lambda) / rates.ncols() as f64;
        self.b.mapv_inplace(|v| v / F::of(self.lambda));
        for col in rates.columns() {
            let z: Array1<F> = self.b.dot(&col);
            let denom = F::one() + F::of(c) * col.dot(&z);
            let coef = F::of(c) / denom;
            for i in 0..self.dim {
                let zi = z[i] * coef;
                for j in 0..self.dim {
                    self.b[[i, j]] = self.b[[i, j]] - zi * z[j];
                }
            }
        }
    }
}

pub fn update_inverse<F: Real>(mut c: CorrelationInverse<F>, rates: ArrayView2<F>) -> Result<CorrelationInverse<F>> {
    c.update(rates)?;
    Ok(c)
}

/// Directly inverts `R̂ + εI`, with `R̂` the normalized exponentially
/// weighted correlation of the stream (one sample per column).
pub fn direct_inverse_oracle(stream: ArrayView2<f64>, lambda: f64, epsilon: f64) -> Result<Array2<f64>> {
    let t = stream.ncols();
    if t == 0 {
        return Err(Error::InvalidArgument("empty sample stream".into()));
    }
    let dim = stream.nrows();
    let mut r = Array2::<f64>::zeros((dim, dim));
    for (i, col) in stream.columns().into_iter().enumerate() {
        let w = lambda.powf((t - 1 - i) as f64);
        for a in 0..dim {
            for b in 0..dim {
                r[[a, b]] += w * col[a] * col[b];
            }
        }
    }
    r *= (1.0 - lambda) / (1.0 - lambda.powf(t as f64));
    spd_inverse(add_diagonal(r.view(), epsilon).view())
}
