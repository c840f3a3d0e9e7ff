use serde::{Deserialize, Serialize};

use super::constraint::magnified_constraint;
use crate::error::{Error, Result};
use crate::model::engine::ScnPass;
use crate::model::{AdmgPosterior, ConfounderPosterior, ScmParameters};
use crate::numerics::{softplus, DenseMatrix};

/// Rows evaluated per batch when scoring whole panels.
const EVAL_CHUNK: usize = 256;

/// Per-timestep weights in `C(tau)`: each within `[tau, 1/tau]`, summing to `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    values: Vec<f64>,
    tau: f64,
}

impl SampleWeights {
    pub fn new(values: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
        }
        if values.is_empty() {
            return Err(Error::invalid("sample weights need at least one timestep"));
        }
        let (lo, hi) = (tau * (1.0 - 1e-12), (1.0 / tau) * (1.0 + 1e-12));
        if let Some((t, w)) = values.iter().enumerate().find(|(_, w)| !(**w >= lo && **w <= hi)) {
            return Err(Error::invalid(format!(
                "weight {w} at timestep {t} is outside [{tau}, {}]",
                1.0 / tau
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - values.len() as f64).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "weights sum to {sum}, expected {}",
                values.len()
            )));
        }
        Ok(Self { values, tau })
    }

    pub fn uniform(len: usize, tau: f64) -> Result<Self> {
        Self::new(vec![1.0; len], tau)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sparsity weight and augmented Lagrangian multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSchedule {
    pub lambda: f64,
    pub rho: f64,
    pub alpha: f64,
}

impl Default for ConstraintSchedule {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            rho: 1.0,
            alpha: 0.0,
        }
    }
}

/// The three score terms. `confounder_kl` carries the regularizer's sign,
/// i.e. it is minus the KL divergence, so the total is a plain sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub data_fit: f64,
    pub graph_penalty: f64,
    pub confounder_kl: f64,
    pub h_value: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    pub fn new(data_fit: f64, graph_penalty: f64, confounder_kl: f64, h_value: f64) -> Self {
        Self {
            data_fit,
            graph_penalty,
            confounder_kl,
            h_value,
            total: data_fit + graph_penalty + confounder_kl,
        }
    }

    /// Names the first non-finite term.
    pub fn check_finite(&self) -> Result<()> {
        for (term, v) in [
            ("data_fit", self.data_fit),
            ("graph_penalty", self.graph_penalty),
            ("confounder_kl", self.confounder_kl),
            ("h_value", self.h_value),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: term.into() });
            }
        }
        Ok(())
    }
}

pub(crate) fn bernoulli_entropy_from_logs(p: f64, log_p: f64, log_q: f64) -> f64 {
    let a = if p > 0.0 { -p * log_p } else { 0.0 };
    let b = if p < 1.0 { -(1.0 - p) * log_q } else { 0.0 };
    a + b
}

/// `log P` and `log(1 - P)` for an allowed entry.
pub(crate) fn edge_logs(post: &AdmgPosterior, i: usize, j: usize) -> (f64, f64, f64) {
    let log_p = -softplus(-post.gamma()[(i, j)]) - softplus(-post.theta()[(i, j)]);
    let p = log_p.exp();
    (p, log_p, (-p).ln_1p())
}

/// Summed Bernoulli entropy of all allowed edges.
pub fn edge_entropy(post: &AdmgPosterior) -> f64 {
    let n = post.num_nodes();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if post.is_allowed(i, j) {
                let (p, lp, lq) = edge_logs(post, i, j);
                total += bernoulli_entropy_from_logs(p, lp, lq);
            }
        }
    }
    total
}

/// `-(lambda * E||M||_F^2 + rho * h^2 + alpha * h) + entropy`, with `h` on
/// the probability matrix.
pub fn graph_penalty(post: &AdmgPosterior, sched: &ConstraintSchedule) -> Result<f64> {
    let p = post.probabilities();
    let (h, _) = magnified_constraint(&p, post.num_observed())?;
    Ok(-(sched.lambda * p.sum() + sched.rho * h * h + sched.alpha * h) + edge_entropy(post))
}

fn check_weights(weights: Option<&SampleWeights>, t: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != t {
            return Err(Error::dim("sample weights", t, w.len()));
        }
    }
    Ok(())
}

/// `sum_t w_t sum_k KL(N(mu, sigma^2) || N(0, 1))`.
pub fn confounder_kl(posterior: &ConfounderPosterior, weights: Option<&SampleWeights>) -> Result<f64> {
    let (t_len, r) = (posterior.mu.rows(), posterior.mu.cols());
    if posterior.sigma.rows() != t_len || posterior.sigma.cols() != r {
        return Err(Error::dim(
            "confounder scale",
            format!("{t_len}x{r}"),
            format!("{}x{}", posterior.sigma.rows(), posterior.sigma.cols()),
        ));
    }
    check_weights(weights, t_len)?;
    let mut total = 0.0;
    for t in 0..t_len {
        let mut kl = 0.0;
        for k in 0..r {
            let (m, s) = (posterior.mu[(t, k)], posterior.sigma[(t, k)]);
            if !(s > 0.0) {
                return Err(Error::invalid(format!(
                    "confounder scale must be positive, got {s} at ({t},{k})"
                )));
            }
            kl += 0.5 * (m * m + s * s - 1.0) - s.ln();
        }
        total += weights.map_or(1.0, |w| w.values()[t]) * kl;
    }
    Ok(total)
}

/// Per-timestep joint log-likelihood averaged over the graph samples; the
/// first `p` entries (no full history) are zero.
pub fn timestep_log_likelihoods(
    params: &ScmParameters,
    x: &DenseMatrix,
    confounders: &DenseMatrix,
    graphs: &[DenseMatrix],
) -> Result<Vec<f64>> {
    let per_node = node_log_likelihoods(params, x, confounders, graphs)?;
    let p = params.lags();
    let mut out = vec![0.0; x.rows()];
    for (c, slot) in out[p..].iter_mut().enumerate() {
        *slot = (0..per_node.rows()).map(|j| per_node[(j, c)]).sum();
    }
    Ok(out)
}

/// `d x (T - p)` matrix of per-node log densities averaged over the graph
/// samples; column `c` is timestep `p + c`.
pub fn node_log_likelihoods(
    params: &ScmParameters,
    x: &DenseMatrix,
    confounders: &DenseMatrix,
    graphs: &[DenseMatrix],
) -> Result<DenseMatrix> {
    let p = params.lags();
    let d = params.num_observed();
    if x.rows() <= p {
        return Err(Error::invalid(format!(
            "panel has {} timesteps; at least {} are needed for {p} lags",
            x.rows(),
            p + 1
        )));
    }
    if graphs.is_empty() {
        return Err(Error::invalid("at least one graph sample is required"));
    }
    let ts_all: Vec<usize> = (p..x.rows()).collect();
    let mut out = DenseMatrix::zeros(d, ts_all.len());
    let inv = 1.0 / graphs.len() as f64;
    for (chunk_idx, ts) in ts_all.chunks(EVAL_CHUNK).enumerate() {
        let pass = ScnPass::forward(params, x, confounders, ts, graphs)?;
        for s in 0..pass.num_samples() {
            let means = pass.means(s);
            for j in 0..d {
                for (b, &t) in ts.iter().enumerate() {
                    out[(j, chunk_idx * EVAL_CHUNK + b)] +=
                        inv * params.gaussian_log_density(j, x[(t, j)], means[(j, b)]);
                }
            }
        }
    }
    Ok(out)
}

/// Monte Carlo data fit: `mean_s sum_{t >= p} w_t log p(x^t | history, M_s)`.
pub fn data_fit(
    params: &ScmParameters,
    x: &DenseMatrix,
    confounders: &DenseMatrix,
    graphs: &[DenseMatrix],
    weights: Option<&SampleWeights>,
) -> Result<f64> {
    check_weights(weights, x.rows())?;
    let ll = timestep_log_likelihoods(params, x, confounders, graphs)?;
    Ok(ll
        .iter()
        .enumerate()
        .skip(params.lags())
        .map(|(t, v)| weights.map_or(1.0, |w| w.values()[t]) * v)
        .sum())
}
