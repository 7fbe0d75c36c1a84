//! Dense row-major matrices and the handful of kernels the rest of the crate needs.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable `ln(sum(exp(x)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Row-wise softmax of `m / temperature`, computed with max-subtraction.
pub fn row_softmax<T: Scalar>(m: &Matrix<T>, temperature: T) -> Result<Matrix<T>> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - mx) / temperature).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out.ensure_finite("row_softmax")?;
    Ok(out)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
