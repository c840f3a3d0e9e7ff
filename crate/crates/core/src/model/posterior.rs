use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, DenseMatrix};

/// Variational posterior over the magnified adjacency matrix.
///
/// Indices `0..d` are observed metrics, `d..d+r` latent confounders. Each
/// entry carries an existence logit `gamma[i][j]` and a direction logit
/// `theta[i][j]`, with `theta` kept antisymmetric. Edges are only allowed
/// into observed nodes and never on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmgPosterior {
    d: usize,
    r: usize,
    gamma: DenseMatrix,
    theta: DenseMatrix,
}

impl AdmgPosterior {
    /// All allowed edges start at probability `initial_probability` with a
    /// neutral direction logit.
    pub fn new(d: usize, r: usize, initial_probability: f64) -> Result<Self> {
        if !(initial_probability > 0.0 && initial_probability < 0.5) {
            return Err(Error::invalid(format!(
                "initial edge probability must lie in (0, 0.5), got {initial_probability}"
            )));
        }
        let n = d + r;
        // sigmoid(gamma) * sigmoid(0) = p  =>  sigmoid(gamma) = 2p
        let s = 2.0 * initial_probability;
        let g0 = (s / (1.0 - s)).ln();
        let mut post = Self {
            d,
            r,
            gamma: DenseMatrix::zeros(n, n),
            theta: DenseMatrix::zeros(n, n),
        };
        for i in 0..n {
            for j in 0..n {
                if post.is_allowed(i, j) {
                    post.gamma[(i, j)] = g0;
                }
            }
        }
        Ok(post)
    }

    pub fn from_logits(d: usize, r: usize, gamma: DenseMatrix, theta: DenseMatrix) -> Result<Self> {
        let n = d + r;
        for (name, m) in [("gamma", &gamma), ("theta", &theta)] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::dim(
                    format!("AdmgPosterior {name}"),
                    format!("{n}x{n}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("AdmgPosterior {name}"),
                });
            }
        }
        for i in 0..n {
            for j in 0..n {
                if (theta[(i, j)] + theta[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "theta must be antisymmetric; ({i},{j}) violates it"
                    )));
                }
            }
        }
        Ok(Self { d, r, gamma, theta })
    }

    pub fn num_observed(&self) -> usize {
        self.d
    }

    pub fn num_latent(&self) -> usize {
        self.r
    }

    pub fn num_nodes(&self) -> usize {
        self.d + self.r
    }

    pub fn gamma(&self) -> &DenseMatrix {
        &self.gamma
    }

    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    /// Edge `i -> j` is structurally possible: target observed, no self loop.
    #[inline]
    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        i != j && j < self.d && i < self.num_nodes()
    }

    pub fn set_gamma(&mut self, i: usize, j: usize, value: f64) {
        self.gamma[(i, j)] = value;
    }

    /// Sets `theta[i][j] = value` and `theta[j][i] = -value`.
    pub fn set_theta(&mut self, i: usize, j: usize, value: f64) {
        self.theta[(i, j)] = value;
        self.theta[(j, i)] = -value;
    }

    pub fn edge_probability(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.num_nodes();
        if i >= n {
            return Err(Error::OutOfRange { index: i, size: n });
        }
        if j >= n {
            return Err(Error::OutOfRange { index: j, size: n });
        }
        Ok(self.prob_unchecked(i, j))
    }

    #[inline]
    fn prob_unchecked(&self, i: usize, j: usize) -> f64 {
        if self.is_allowed(i, j) {
            sigmoid(self.gamma[(i, j)]) * sigmoid(self.theta[(i, j)])
        } else {
            0.0
        }
    }

    /// Full `(d+r) x (d+r)` edge-probability matrix; masked entries are 0.
    pub fn probabilities(&self) -> DenseMatrix {
        let n = self.num_nodes();
        DenseMatrix::from_fn(n, n, |i, j| self.prob_unchecked(i, j))
    }

    /// Number of free parameters: every gamma entry plus the strict upper
    /// triangle of theta.
    pub fn num_params(&self) -> usize {
        let n = self.num_nodes();
        n * n + n * (n.saturating_sub(1)) / 2
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.gamma.as_slice());
        let n = self.num_nodes();
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.theta[(i, j)]);
            }
        }
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let n = self.num_nodes();
        self.gamma.as_mut_slice().copy_from_slice(&src[..n * n]);
        let mut at = n * n;
        for i in 0..n {
            for j in i + 1..n {
                self.set_theta(i, j, src[at]);
                at += 1;
            }
        }
        at
    }

    /// Chains a gradient with respect to the probability matrix into the
    /// flat `(gamma, theta-upper)` layout, appending to `out`.
    pub fn write_logit_gradient(&self, d_prob: &DenseMatrix, out: &mut Vec<f64>) {
        let n = self.num_nodes();
        let mut d_gamma = DenseMatrix::zeros(n, n);
        let mut d_theta = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if !self.is_allowed(i, j) {
                    continue;
                }
                let sg = sigmoid(self.gamma[(i, j)]);
                let st = sigmoid(self.theta[(i, j)]);
                let g = d_prob[(i, j)];
                d_gamma[(i, j)] = g * st * sg * (1.0 - sg);
                d_theta[(i, j)] = g * sg * st * (1.0 - st);
            }
        }
        self.write_split_gradient(&d_gamma, &d_theta, out);
    }

    /// Appends per-entry gradients `(d gamma[i][j], d theta[i][j])`, treating
    /// each theta entry as free, in the flat layout. Antisymmetry folds the
    /// lower triangle into the upper one with a sign flip.
    pub fn write_split_gradient(&self, d_gamma: &DenseMatrix, d_theta: &DenseMatrix, out: &mut Vec<f64>) {
        let n = self.num_nodes();
        let start = out.len();
        out.resize(start + n * n, 0.0);
        for i in 0..n {
            for j in 0..n {
                if self.is_allowed(i, j) {
                    out[start + i * n + j] = d_gamma[(i, j)];
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let up = if self.is_allowed(i, j) { d_theta[(i, j)] } else { 0.0 };
                let down = if self.is_allowed(j, i) { d_theta[(j, i)] } else { 0.0 };
                out.push(up - down);
            }
        }
    }

    /// Log-odds of each edge probability, `log P - log(1 - P)`, computed
    /// without forming `P` for masked or saturated entries.
    pub fn logits(&self) -> DenseMatrix {
        let n = self.num_nodes();
        DenseMatrix::from_fn(n, n, |i, j| {
            if !self.is_allowed(i, j) {
                return f64::NEG_INFINITY;
            }
            let g = self.gamma[(i, j)];
            let t = self.theta[(i, j)];
            let log_p = -crate::numerics::softplus(-g) - crate::numerics::softplus(-t);
            let p = log_p.exp();
            log_p - (-p).ln_1p()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_examples() {
        let mut p = AdmgPosterior::new(3, 0, 0.1).unwrap();
        p.set_gamma(0, 1, 0.0);
        p.set_theta(0, 1, 0.0);
        assert!((p.edge_probability(0, 1).unwrap() - 0.25).abs() < 1e-15);
        p.set_gamma(0, 1, 50.0);
        p.set_theta(0, 1, 50.0);
        assert!(p.edge_probability(0, 1).unwrap() > 0.999);
        p.set_gamma(0, 1, 2.0);
        p.set_theta(0, 1, -1.0);
        let expected = (1.0 / (1.0 + (-2.0f64).exp())) * (1.0 / (1.0 + 1.0f64.exp()));
        assert!((p.edge_probability(0, 1).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.2369).abs() < 1e-4);
        assert_eq!(p.theta()[(1, 0)], 1.0);
    }

    #[test]
    fn initial_probability_and_mask() {
        let p = AdmgPosterior::new(3, 2, 0.1).unwrap();
        let probs = p.probabilities();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i != j && j < 3 { 0.1 } else { 0.0 };
                assert!((probs[(i, j)] - expected).abs() < 1e-12, "({i},{j})");
            }
        }
        assert!(p.edge_probability(5, 0).is_err());
    }

    #[test]
    fn flat_roundtrip_keeps_antisymmetry() {
        let mut p = AdmgPosterior::new(2, 1, 0.1).unwrap();
        let mut flat = Vec::new();
        p.write_params(&mut flat);
        assert_eq!(flat.len(), p.num_params());
        for (k, v) in flat.iter_mut().enumerate() {
            *v = k as f64 * 0.1;
        }
        p.read_params(&flat);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.theta()[(i, j)], -p.theta()[(j, i)]);
            }
        }
    }

    #[test]
    fn rejects_non_antisymmetric_theta() {
        let g = DenseMatrix::zeros(2, 2);
        let t = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(AdmgPosterior::from_logits(2, 0, g, t).is_err());
    }
}
