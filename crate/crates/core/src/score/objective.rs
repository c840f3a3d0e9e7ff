//! The full training objective with its gradient in the flat parameter
//! layout of [`ModelState`].

use super::constraint::magnified_constraint;
use super::terms::{bernoulli_entropy_from_logs, edge_logs, ConstraintSchedule, ScoreBreakdown};
use crate::error::{Error, Result};
use crate::model::engine::ScnPass;
use crate::model::ModelState;
use crate::numerics::{relaxed_bernoulli_with_noise, sigmoid, DenseMatrix};

/// Everything random or data-dependent that one objective evaluation needs.
/// Fixing these makes the objective a deterministic function of the
/// parameters.
pub struct ObjectiveBatch<'a> {
    /// Standardized `T x d` panel.
    pub x: &'a DenseMatrix,
    /// Length `T`.
    pub weights: &'a [f64],
    /// Target timesteps of the data-fit estimate, each `>= p`.
    pub timesteps: &'a [usize],
    /// Standard normal draws, `T x r`.
    pub confounder_noise: &'a DenseMatrix,
    /// Logistic noise per graph sample, each `(d+r) x (d+r)`.
    pub graph_noise: &'a [DenseMatrix],
    pub temperature: f64,
    /// Use hard 0/1 graph samples in the forward pass with the relaxed
    /// gradient.
    pub straight_through: bool,
    pub schedule: ConstraintSchedule,
    /// Terms that contribute to the returned gradient.
    pub terms: TermMask,
    /// Multiplier on the confounder KL gradient (1 for the exact score).
    pub kl_weight: f64,
}

/// Selects score terms for differentiation; the breakdown always reports
/// all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMask {
    pub data_fit: bool,
    pub graph_penalty: bool,
    pub confounder_kl: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl TermMask {
    pub const ALL: Self = Self {
        data_fit: true,
        graph_penalty: true,
        confounder_kl: true,
    };

    pub fn only_data_fit() -> Self {
        Self {
            data_fit: true,
            graph_penalty: false,
            confounder_kl: false,
        }
    }

    pub fn only_graph_penalty() -> Self {
        Self {
            data_fit: false,
            graph_penalty: true,
            confounder_kl: false,
        }
    }

    pub fn only_confounder_kl() -> Self {
        Self {
            data_fit: false,
            graph_penalty: false,
            confounder_kl: true,
        }
    }
}

pub struct ObjectiveValue {
    pub breakdown: ScoreBreakdown,
    /// Gradient of the sum of the selected terms (the total by default).
    pub gradient: Vec<f64>,
}

pub fn evaluate_objective(state: &ModelState, batch: &ObjectiveBatch<'_>) -> Result<ObjectiveValue> {
    let post = &state.posterior;
    let scm = &state.scm;
    let d = post.num_observed();
    let r = post.num_latent();
    let n = d + r;
    let p = scm.lags();
    let x = batch.x;
    let t_len = x.rows();
    if batch.weights.len() != t_len {
        return Err(Error::dim("objective weights", t_len, batch.weights.len()));
    }
    if batch.confounder_noise.rows() != t_len || batch.confounder_noise.cols() != r {
        return Err(Error::dim(
            "confounder noise",
            format!("{t_len}x{r}"),
            format!("{}x{}", batch.confounder_noise.rows(), batch.confounder_noise.cols()),
        ));
    }
    if batch.graph_noise.is_empty() || batch.timesteps.is_empty() {
        return Err(Error::invalid("need at least one graph sample and one timestep"));
    }
    if !(batch.temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {}",
            batch.temperature
        )));
    }

    // Relaxed graph samples and their derivative with respect to the logit.
    let logits = post.logits();
    let mut graphs = Vec::with_capacity(batch.graph_noise.len());
    let mut slopes = Vec::with_capacity(batch.graph_noise.len());
    for noise in batch.graph_noise {
        let mut m = DenseMatrix::zeros(n, n);
        let mut dm = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if post.is_allowed(i, j) {
                    let (y, dy) = relaxed_bernoulli_with_noise(logits[(i, j)], batch.temperature, noise[(i, j)]);
                    m[(i, j)] = if batch.straight_through {
                        if y > 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        y
                    };
                    dm[(i, j)] = dy;
                }
            }
        }
        graphs.push(m);
        slopes.push(dm);
    }

    // Confounder draws.
    let (conf, tape) = if r > 0 {
        let (cp, tape) = scm.encode_with_tape(x)?;
        (Some(cp), Some(tape))
    } else {
        (None, None)
    };
    let c = match &conf {
        Some(cp) => cp.sample(batch.confounder_noise),
        None => DenseMatrix::zeros(t_len, 0),
    };

    // Data fit.
    let pass = ScnPass::forward(scm, x, &c, batch.timesteps, &graphs)?;
    let b = batch.timesteps.len();
    let scale = (t_len - p) as f64 / b as f64;
    let fit_on = if batch.terms.data_fit { 1.0 } else { 0.0 };
    let kl_on = if batch.terms.confounder_kl {
        batch.kl_weight
    } else {
        0.0
    };
    let prior_on = if batch.terms.graph_penalty { 1.0 } else { 0.0 };
    let inv_mc = 1.0 / graphs.len() as f64;
    let mut grads = scm.zero_gradients();
    let mut data_fit = 0.0;
    let mut d_means = Vec::with_capacity(graphs.len());
    let inv_var: Vec<f64> = scm.log_noise_scale().iter().map(|s| (-2.0 * s).exp()).collect();
    for s in 0..pass.num_samples() {
        let means = pass.means(s);
        let mut dm = DenseMatrix::zeros(d, b);
        for j in 0..d {
            for (bi, &t) in batch.timesteps.iter().enumerate() {
                let coef = scale * inv_mc * batch.weights[t];
                let mu = means[(j, bi)];
                let resid = x[(t, j)] - mu;
                data_fit += coef * scm.gaussian_log_density(j, x[(t, j)], mu);
                dm[(j, bi)] = fit_on * coef * resid * inv_var[j];
                grads.log_noise_scale[j] += fit_on * coef * (resid * resid * inv_var[j] - 1.0);
            }
        }
        d_means.push(dm);
    }
    let input_grads = pass.backward(scm, &graphs, &d_means, t_len, &mut grads)?;

    let mut d_gamma = DenseMatrix::zeros(n, n);
    let mut d_theta = DenseMatrix::zeros(n, n);
    for (dg, slope) in input_grads.graphs.iter().zip(&slopes) {
        for i in 0..n {
            for j in 0..n {
                if !post.is_allowed(i, j) || slope[(i, j)] == 0.0 {
                    continue;
                }
                let sg = sigmoid(post.gamma()[(i, j)]);
                let st = sigmoid(post.theta()[(i, j)]);
                let q = 1.0 - sg * st;
                let g = dg[(i, j)] * slope[(i, j)] / q;
                d_gamma[(i, j)] += g * (1.0 - sg);
                d_theta[(i, j)] += g * (1.0 - st);
            }
        }
    }

    // Confounder regularizer, minus the weighted KL.
    let mut conf_term = 0.0;
    if let (Some(cp), Some(tape)) = (&conf, &tape) {
        let eps = batch.confounder_noise;
        let mut d_mu = input_grads.confounders.clone();
        let mut d_sigma = DenseMatrix::from_fn(t_len, r, |t, k| input_grads.confounders[(t, k)] * eps[(t, k)]);
        for t in 0..t_len {
            let w = batch.weights[t];
            for k in 0..r {
                let (m, s) = (cp.mu[(t, k)], cp.sigma[(t, k)]);
                conf_term -= w * (0.5 * (m * m + s * s - 1.0) - s.ln());
                d_mu[(t, k)] -= kl_on * w * m;
                d_sigma[(t, k)] -= kl_on * w * (s - 1.0 / s);
            }
        }
        scm.encode_backward(tape, &d_mu, &d_sigma, &mut grads.f_gauss)?;
    }

    // Graph prior and entropy.
    let probs = post.probabilities();
    let (h, dh) = magnified_constraint(&probs, d)?;
    let sched = &batch.schedule;
    let mut penalty = -(sched.lambda * probs.sum() + sched.rho * h * h + sched.alpha * h);
    let h_coef = 2.0 * sched.rho * h + sched.alpha;
    for i in 0..n {
        for j in 0..n {
            if !post.is_allowed(i, j) {
                continue;
            }
            let (pv, lp, lq) = edge_logs(post, i, j);
            penalty += bernoulli_entropy_from_logs(pv, lp, lq);
            // d entropy / dP = log(1 - P) - log P
            let d_prob = prior_on * (-sched.lambda - h_coef * dh[(i, j)] + (lq - lp));
            let sg = sigmoid(post.gamma()[(i, j)]);
            let st = sigmoid(post.theta()[(i, j)]);
            d_gamma[(i, j)] += d_prob * st * sg * (1.0 - sg);
            d_theta[(i, j)] += d_prob * sg * st * (1.0 - st);
        }
    }

    let breakdown = ScoreBreakdown::new(data_fit, penalty, conf_term, h);
    breakdown.check_finite()?;
    let mut gradient = Vec::with_capacity(state.num_params());
    post.write_split_gradient(&d_gamma, &d_theta, &mut gradient);
    grads.write_flat(&mut gradient);
    if let Some(bad) = gradient.iter().position(|g| !g.is_finite()) {
        let term = if bad < post.num_params() {
            "graph gradient"
        } else {
            "network gradient"
        };
        return Err(Error::NonFinite { term: term.into() });
    }
    Ok(ObjectiveValue { breakdown, gradient })
}
