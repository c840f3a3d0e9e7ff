use crate::error::{Error, Result};
use crate::numerics::{matrix_exp, matrix_exp_vjp, DenseMatrix};

/// Value and gradients of the acyclicity-plus-ancestrality constraint.
#[derive(Debug, Clone)]
pub struct ConstraintGradient {
    pub value: f64,
    pub d_directed: DenseMatrix,
    pub d_bidirected: DenseMatrix,
}

fn check_inputs(directed: &DenseMatrix, bidirected: &DenseMatrix) -> Result<()> {
    let d = directed.rows();
    if !directed.is_square() {
        return Err(Error::dim(
            "constraint directed matrix",
            "square",
            format!("{}x{}", directed.rows(), directed.cols()),
        ));
    }
    if bidirected.rows() != d || bidirected.cols() != d {
        return Err(Error::dim(
            "constraint bidirected matrix",
            format!("{d}x{d}"),
            format!("{}x{}", bidirected.rows(), bidirected.cols()),
        ));
    }
    for i in 0..d {
        for j in 0..i {
            if (bidirected[(i, j)] - bidirected[(j, i)]).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "bidirected matrix must be symmetric; ({i},{j}) differs from ({j},{i})"
                )));
            }
        }
    }
    Ok(())
}

/// `tr(e^{D∘D}) - d + sum(e^{D∘D} ∘ B)`.
pub fn h_constraint(directed: &DenseMatrix, bidirected: &DenseMatrix) -> Result<f64> {
    check_inputs(directed, bidirected)?;
    let e = matrix_exp(&directed.hadamard(directed))?;
    Ok(e.trace() - directed.rows() as f64 + e.hadamard(bidirected).sum())
}

pub fn h_constraint_with_gradient(directed: &DenseMatrix, bidirected: &DenseMatrix) -> Result<ConstraintGradient> {
    check_inputs(directed, bidirected)?;
    let d = directed.rows();
    let s = directed.hadamard(directed);
    let upstream = DenseMatrix::identity(d).add(bidirected);
    let (e, d_s) = matrix_exp_vjp(&s, &upstream)?;
    let value = e.trace() - d as f64 + e.hadamard(bidirected).sum();
    let d_directed = DenseMatrix::from_fn(d, d, |i, j| 2.0 * directed[(i, j)] * d_s[(i, j)]);
    Ok(ConstraintGradient {
        value,
        d_directed,
        d_bidirected: e,
    })
}

/// Constraint evaluated on a magnified probability matrix (observed block
/// plus latent rows) and its gradient with respect to every entry. The
/// max/min in the bidirected block route the gradient to the selecting
/// entry; ties go to the first latent and to the row-side child.
pub fn magnified_constraint(probabilities: &DenseMatrix, d: usize) -> Result<(f64, DenseMatrix)> {
    let n = probabilities.rows();
    if !probabilities.is_square() || n < d {
        return Err(Error::dim(
            "magnified constraint",
            format!("square with at least {d} rows"),
            format!("{}x{}", probabilities.rows(), probabilities.cols()),
        ));
    }
    let directed = probabilities.block(0, 0, d, d);
    let mut bidirected = DenseMatrix::zeros(d, d);
    // (latent row, child column) whose probability is B[i][j].
    let mut source = vec![None; d * d];
    for k in d..n {
        let row = probabilities.row(k);
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                let (v, child) = if row[j] < row[i] { (row[j], j) } else { (row[i], i) };
                if v > bidirected[(i, j)] {
                    bidirected[(i, j)] = v;
                    source[i * d + j] = Some((k, child));
                }
            }
        }
    }
    let cg = h_constraint_with_gradient(&directed, &bidirected)?;
    let mut grad = DenseMatrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            grad[(i, j)] = cg.d_directed[(i, j)];
            if let Some((k, child)) = source[i * d + j] {
                grad[(k, child)] += cg.d_bidirected[(i, j)];
            }
        }
    }
    Ok((cg.value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_is_feasible() {
        let z = DenseMatrix::zeros(5, 5);
        assert_eq!(h_constraint(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn two_cycle_value() {
        let d = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let z = DenseMatrix::zeros(2, 2);
        let h = h_constraint(&d, &z).unwrap();
        assert!((h - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_b_rejected() {
        let z = DenseMatrix::zeros(2, 2);
        let b = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
        assert!(h_constraint(&z, &b).is_err());
    }
}
