//! Matrix exponential by scaling and squaring around a truncated Taylor
//! core, plus its adjoint (Fréchet derivative) for reverse-mode use.

use super::matrix::{gemm, DenseMatrix};
use crate::error::{Error, Result};

/// Norm the scaled matrix is brought under before the series is summed.
const SCALED_NORM: f64 = 0.5;
const MAX_TERMS: usize = 64;
/// Beyond this one-norm the exponential overflows f64 for some inputs; we
/// still try, and report the norm if the result is not finite.
const OVERFLOW_HINT: f64 = 700.0;

pub fn matrix_exp(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::dim(
            "matrix_exp",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite {
            term: "matrix_exp input".into(),
        });
    }
    let norm = a.norm_one();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));
    let mut result = taylor_core(&scaled);
    let n = a.rows();
    let mut tmp = DenseMatrix::zeros(n, n);
    for _ in 0..squarings {
        gemm(1.0, &result, false, &result, false, 0.0, &mut tmp);
        std::mem::swap(&mut result, &mut tmp);
        if !result.is_finite() {
            break;
        }
    }
    if !result.is_finite() {
        return Err(Error::Numeric {
            context: if norm > OVERFLOW_HINT {
                "matrix_exp overflow (input norm too large)".into()
            } else {
                "matrix_exp overflow".into()
            },
            norm,
        });
    }
    Ok(result)
}

fn taylor_core(a: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    let mut sum = DenseMatrix::identity(n);
    let mut term = DenseMatrix::identity(n);
    let mut next = DenseMatrix::zeros(n, n);
    for k in 1..=MAX_TERMS {
        gemm(1.0 / k as f64, &term, false, a, false, 0.0, &mut next);
        std::mem::swap(&mut term, &mut next);
        sum.add_assign_scaled(&term, 1.0);
        if term.max_abs() <= f64::EPSILON * 1e-3 * sum.max_abs() {
            break;
        }
    }
    sum
}

/// Returns `(e^A, L(A, E))` where `L` is the Fréchet derivative of the
/// exponential at `A` in direction `E`, read off the block exponential
/// `exp([[A, E], [0, A]])`.
pub fn matrix_exp_frechet(a: &DenseMatrix, e: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if !a.is_square() || a.rows() != e.rows() || a.cols() != e.cols() {
        return Err(Error::dim(
            "matrix_exp_frechet",
            format!("two {0}x{0} matrices", a.rows()),
            format!("{}x{}", e.rows(), e.cols()),
        ));
    }
    let n = a.rows();
    let block = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => e[(i, j - n)],
        (false, true) => 0.0,
        (false, false) => a[(i - n, j - n)],
    });
    let big = matrix_exp(&block)?;
    Ok((big.block(0, 0, n, n), big.block(0, n, n, n)))
}

/// Exponential together with the gradient of `<G, e^A>` with respect to `A`,
/// which is `L(A^T, G)`. Returns `(e^A, gradient)`.
pub fn matrix_exp_vjp(a: &DenseMatrix, upstream: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (exp_t, grad) = matrix_exp_frechet(&a.transpose(), upstream)?;
    Ok((exp_t.transpose(), grad))
}
