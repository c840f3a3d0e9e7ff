use serde::{Deserialize, Serialize};

use super::posterior::AdmgPosterior;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Directed plus bidirected adjacency over the observed nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedGraph {
    directed: DenseMatrix,
    bidirected: DenseMatrix,
}

impl MixedGraph {
    pub fn new(directed: DenseMatrix, bidirected: DenseMatrix) -> Result<Self> {
        let d = directed.rows();
        for (name, m) in [("directed", &directed), ("bidirected", &bidirected)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::dim(
                    format!("MixedGraph {name}"),
                    format!("{d}x{d}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    term: format!("MixedGraph {name}"),
                });
            }
        }
        for i in 0..d {
            if directed[(i, i)] != 0.0 || bidirected[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("self loop on node {i}")));
            }
            for j in 0..i {
                if bidirected[(i, j)] != bidirected[(j, i)] {
                    return Err(Error::invalid(format!(
                        "bidirected matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { directed, bidirected })
    }

    pub fn empty(d: usize) -> Self {
        Self {
            directed: DenseMatrix::zeros(d, d),
            bidirected: DenseMatrix::zeros(d, d),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.directed.rows()
    }

    pub fn directed(&self) -> &DenseMatrix {
        &self.directed
    }

    pub fn bidirected(&self) -> &DenseMatrix {
        &self.bidirected
    }

    /// 0/1 copy: an entry survives when strictly above `threshold`.
    pub fn binarized(&self, threshold: f64) -> Self {
        let cut = |v: f64| if v > threshold { 1.0 } else { 0.0 };
        Self {
            directed: self.directed.map(cut),
            bidirected: self.bidirected.map(cut),
        }
    }

    /// Directed edges `(from, to)` with nonzero weight, row-major order.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let d = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..d {
            for j in 0..d {
                if self.directed[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Unordered bidirected pairs `(i, j)` with `i < j`.
    pub fn bidirected_edges(&self) -> Vec<(usize, usize)> {
        let d = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                if self.bidirected[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Soft decomposition of a magnified probability matrix with `d` observed
/// nodes: `D` is the observed block, `B[i][j] = max_k min(P[k][i], P[k][j])`.
pub fn decompose_probabilities(probabilities: &DenseMatrix, d: usize) -> Result<MixedGraph> {
    let n = probabilities.rows();
    if !probabilities.is_square() || n < d {
        return Err(Error::dim(
            "decompose probabilities",
            format!("square with at least {d} rows"),
            format!("{}x{}", probabilities.rows(), probabilities.cols()),
        ));
    }
    let directed = DenseMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { probabilities[(i, j)] });
    let mut bidirected = DenseMatrix::zeros(d, d);
    for k in d..n {
        let row = probabilities.row(k);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    let v = row[i].min(row[j]);
                    if v > bidirected[(i, j)] {
                        bidirected[(i, j)] = v;
                    }
                }
            }
        }
    }
    MixedGraph::new(directed, bidirected)
}

/// Binary mixed graph read off the posterior at `threshold`.
pub fn decompose(post: &AdmgPosterior, threshold: f64) -> Result<MixedGraph> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(decompose_probabilities(&post.probabilities(), post.num_observed())?.binarized(threshold))
}
