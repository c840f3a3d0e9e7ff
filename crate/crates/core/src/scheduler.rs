//! Heterogeneity-aware sample weights: a weight network maps each `x^t` to
//! a positive raw weight, raw weights are projected onto `C(tau)`, and the
//! network is trained to minimize the weighted score with the per-timestep
//! likelihoods held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Adam, DenseMatrix, FeedForwardNet, RandomSource};
use crate::score::SampleWeights;

/// Raw log-weights are clamped to this magnitude before exponentiation.
const MAX_LOG_WEIGHT: f64 = 30.0;

/// Projects nonnegative raw weights onto
/// `C(tau) = { w : tau <= w_t <= 1/tau, sum_t w_t = T }`.
///
/// The result is `clip(s * raw, tau, 1/tau)` with the scale `s` chosen so
/// the sum is `T`, i.e. the clip-and-renormalize fixpoint. `s` is found by
/// scanning the breakpoints where entries leave or hit a bound. Equal raw
/// values give `w = 1`; an input already in `C(tau)` is returned as is.
pub fn project_weights(raw: &[f64], tau: f64) -> Result<SampleWeights> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    if raw.is_empty() {
        return Err(Error::invalid("cannot project an empty weight vector"));
    }
    if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!(
            "raw weights must be finite and nonnegative, got {v}"
        )));
    }
    let t_len = raw.len() as f64;
    if let Ok(w) = SampleWeights::new(raw.to_vec(), tau) {
        return Ok(w);
    }
    if raw.iter().all(|&v| v == raw[0]) {
        return SampleWeights::uniform(raw.len(), tau);
    }
    let (lo, hi) = (tau, 1.0 / tau);

    // Entry t is at `lo` for s <= lo/r_t, free in between, at `hi` beyond hi/r_t.
    let mut events: Vec<(f64, bool, f64)> = Vec::with_capacity(2 * raw.len());
    for &r in raw {
        if r > 0.0 {
            events.push((lo / r, false, r));
            events.push((hi / r, true, r));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut n_low = raw.len() as f64;
    let mut n_high = 0.0;
    let mut free_mass = 0.0;
    let mut scale = None;
    for &(s_event, to_high, r) in &events {
        let base = lo * n_low + hi * n_high;
        if free_mass > 0.0 {
            let s = (t_len - base) / free_mass;
            if s <= s_event {
                scale = Some(s);
                break;
            }
        } else if base >= t_len {
            scale = Some(s_event);
            break;
        }
        if to_high {
            free_mass -= r;
            n_high += 1.0;
        } else {
            free_mass += r;
            n_low -= 1.0;
        }
    }
    let s = match scale {
        Some(s) => s,
        None if lo * n_low + hi * n_high >= t_len => events.last().map_or(1.0, |e| e.0),
        None => {
            return Err(Error::invalid(
                "raw weights have too many zeros to reach the required total",
            ))
        }
    };
    let mut w: Vec<f64> = raw.iter().map(|&r| (s * r).clamp(lo, hi)).collect();
    // Put the rounding residue on the free entries.
    let free: Vec<usize> = (0..w.len()).filter(|&t| w[t] > lo && w[t] < hi).collect();
    if !free.is_empty() {
        let residue = t_len - w.iter().sum::<f64>();
        let mass: f64 = free.iter().map(|&t| w[t]).sum();
        for &t in &free {
            w[t] = (w[t] + residue * w[t] / mass).clamp(lo, hi);
        }
    }
    SampleWeights::new(w, tau)
}

/// Gradient of `sum_t w_t * upstream_t` with respect to the raw weights,
/// where `w = project_weights(raw)`. Clipped entries get zero; free entries
/// get `s * (upstream_v - mean_F)` with `mean_F` the raw-weighted mean of
/// the upstream over the free set.
pub fn projection_vjp(raw: &[f64], weights: &SampleWeights, upstream: &[f64]) -> Vec<f64> {
    let (lo, hi) = (weights.tau(), 1.0 / weights.tau());
    let w = weights.values();
    let free: Vec<usize> = (0..w.len())
        .filter(|&t| w[t] > lo * (1.0 + 1e-12) && w[t] < hi * (1.0 - 1e-12) && raw[t] > 0.0)
        .collect();
    let mut out = vec![0.0; raw.len()];
    if free.is_empty() {
        return out;
    }
    let mass: f64 = free.iter().map(|&t| raw[t]).sum();
    let mean = free.iter().map(|&t| raw[t] * upstream[t]).sum::<f64>() / mass;
    let s = w[free[0]] / raw[free[0]];
    for &t in &free {
        out[t] = s * (upstream[t] - mean);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub tau: f64,
    /// Gradient steps per inner optimization.
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub hidden_width: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            inner_steps: 20,
            learning_rate: 1e-3,
            hidden_width: 16,
        }
    }
}

/// Weight network plus its optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerParams {
    weight_net: FeedForwardNet,
    config: SchedulerConfig,
    #[serde(skip)]
    optimizer: Option<Adam>,
}

impl SchedulerParams {
    /// The output layer starts at zero so every raw weight is exactly 1.
    pub fn new(d: usize, config: SchedulerConfig, rng: &mut RandomSource) -> Result<Self> {
        if !(config.tau > 0.0 && config.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", config.tau)));
        }
        if !(config.learning_rate > 0.0) || config.hidden_width == 0 {
            return Err(Error::invalid("scheduler learning rate and width must be positive"));
        }
        let mut weight_net = FeedForwardNet::new(&[d, config.hidden_width, 1], Activation::default(), rng)?;
        weight_net.zero_output_layer();
        Ok(Self {
            weight_net,
            config,
            optimizer: None,
        })
    }

    pub fn from_net(weight_net: FeedForwardNet, config: SchedulerConfig) -> Result<Self> {
        if weight_net.output_dim() != 1 {
            return Err(Error::dim("weight network output", 1, weight_net.output_dim()));
        }
        Ok(Self {
            weight_net,
            config,
            optimizer: None,
        })
    }

    pub fn weight_net(&self) -> &FeedForwardNet {
        &self.weight_net
    }

    pub fn weight_net_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.weight_net
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    fn forward(&self, x: &DenseMatrix) -> Result<(crate::numerics::ForwardTape, Vec<f64>)> {
        let tape = self.weight_net.forward_batch(x.clone())?;
        let raw = tape
            .output()
            .as_slice()
            .iter()
            .map(|&o| o.clamp(-MAX_LOG_WEIGHT, MAX_LOG_WEIGHT).exp())
            .collect();
        Ok((tape, raw))
    }

    pub fn raw_weights(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1)
    }

    /// Current projected weights for the rows of `x`.
    pub fn weights(&self, x: &DenseMatrix) -> Result<SampleWeights> {
        project_weights(&self.raw_weights(x)?, self.config.tau)
    }

    /// Inner objective `sum_t w_t * scores_t` (to be minimized) and its
    /// gradient in the weight network's flat parameter layout.
    pub fn inner_objective(&self, x: &DenseMatrix, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        if scores.len() != x.rows() {
            return Err(Error::dim("frozen per-timestep scores", x.rows(), scores.len()));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "frozen per-timestep scores".into(),
            });
        }
        let (tape, raw) = self.forward(x)?;
        let w = project_weights(&raw, self.config.tau)?;
        let value = w.values().iter().zip(scores).map(|(a, b)| a * b).sum();
        let d_raw = projection_vjp(&raw, &w, scores);
        let outputs = tape.output();
        let upstream = DenseMatrix::from_fn(x.rows(), 1, |t, _| {
            if outputs[(t, 0)].abs() < MAX_LOG_WEIGHT {
                d_raw[t] * raw[t]
            } else {
                0.0
            }
        });
        let mut grads = self.weight_net.zero_gradients();
        self.weight_net.backward(&tape, &upstream, &mut grads)?;
        let mut flat = Vec::with_capacity(self.weight_net.num_params());
        grads.write_flat(&mut flat);
        Ok((value, flat))
    }

    /// Runs the configured number of descent steps on the inner objective
    /// and returns the resulting weights. `scores[t]` is the frozen
    /// per-timestep score contribution (log-likelihood minus KL).
    pub fn inner_optimize(&mut self, x: &DenseMatrix, scores: &[f64]) -> Result<SampleWeights> {
        let n_params = self.weight_net.num_params();
        if self.optimizer.is_none() {
            self.optimizer = Some(Adam::new(n_params, self.config.learning_rate));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..self.config.inner_steps {
            let (_, grad) = self.inner_objective(x, scores)?;
            params.clear();
            self.weight_net.write_params(&mut params);
            if let Some(opt) = self.optimizer.as_mut() {
                opt.descend(&mut params, &grad);
            }
            self.weight_net.read_params(&params);
        }
        self.weights(x)
    }
}

/// Bang-bang minimizer of `sum_t w_t * scores_t` over `C(tau)`: the lowest
/// scores take `1/tau`, the rest `tau`, and the leftover mass is shared
/// equally by the group of tied scores where the budget runs out.
pub fn bang_bang_weights(scores: &[f64], tau: f64) -> Result<SampleWeights> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    let n = scores.len();
    let (lo, hi) = (tau, 1.0 / tau);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut w = vec![lo; n];
    let mut budget = n as f64 * (1.0 - lo);
    let mut start = 0;
    while start < n && budget > 0.0 {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group = &order[start..end];
        let share = ((hi - lo) * group.len() as f64).min(budget) / group.len() as f64;
        for &t in group {
            w[t] += share;
        }
        budget -= share * group.len() as f64;
        start = end;
    }
    SampleWeights::new(w, tau)
}
