//! Small dense kernels shared by the correlation and metric code.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::Real;

fn check_square<F>(m: &ArrayView2<F>) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Shape(format!("expected a square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
pub fn cholesky(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_square(&m)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = m[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = m[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// `log det M` for a symmetric positive definite `M`.
pub fn logdet_psd(m: ArrayView2<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>())
}

/// Solves `M X = B` given the Cholesky factor of `M`.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    if b.nrows() != n {
        return Err(Error::Shape(format!(
            "right-hand side has {} rows, factor is {n}x{n}",
            b.nrows()
        )));
    }
    let mut x = b.to_owned();
    for mut col in x.axis_iter_mut(Axis(1)) {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(x)
}

pub fn spd_inverse(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let l = cholesky(m)?;
    let mut inv = cholesky_solve(&l, Array2::eye(l.nrows()).view())?;
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn add_diagonal(m: ArrayView2<f64>, eps: f64) -> Array2<f64> {
    let mut out = m.to_owned();
    out.diag_mut().mapv_inplace(|v| v + eps);
    out
}

/// Replaces `M` with `(M + Mᵀ) / 2`.
pub fn symmetrize<F: Real>(m: &mut Array2<F>) {
    let n = m.nrows();
    let half = F::of(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[[i, j]] + m[[j, i]]) * half;
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

pub fn frobenius<F: Real>(m: ArrayView2<F>) -> F {
    m.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt()
}

pub fn max_abs_asymmetry<F: Real>(m: ArrayView2<F>) -> F {
    let mut worst = F::zero();
    for ((i, j), &v) in m.indexed_iter() {
        worst = worst.max((v - m[[j, i]]).abs());
    }
    worst
}

/// Batch mean of the outer products of the columns of `x` with those of `y`.
pub fn mean_outer<F: Real>(x: ArrayView2<F>, y: ArrayView2<F>) -> Array2<F> {
    let b = F::of(x.ncols() as f64);
    x.dot(&y.t()) / b
}

pub fn column_sums<F: Real>(m: ArrayView2<F>) -> Array1<F> {
    m.sum_axis(Axis(0))
}
