//! The learning procedure: outer gradient ascent on the weighted score over
//! graph and network parameters, augmented Lagrangian updates between
//! rounds, and inner scheduling rounds once the warm-up has passed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    decompose, decompose_probabilities, AdmgPosterior, Checkpoint, MixedGraph, ModelState, ScmConfig, ScmParameters,
    CHECKPOINT_FORMAT,
};
use crate::numerics::{logistic_noise, Adam, DenseMatrix, RandomSource};
use crate::panel::MetricPanel;
use crate::scheduler::{SchedulerConfig, SchedulerParams};
use crate::score::{
    evaluate_objective, h_constraint, magnified_constraint, node_log_likelihoods, ConstraintSchedule, ObjectiveBatch,
    SampleWeights, ScoreBreakdown, TermMask,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `L_outer`.
    pub outer_rounds: usize,
    pub steps_per_round: usize,
    /// `L_inner`.
    pub inner_steps: usize,
    /// Rounds before inner scheduling starts (`l_scheduling`).
    pub scheduling_warmup: usize,
    pub lambda: f64,
    pub tau: f64,
    pub model_learning_rate: f64,
    pub scheduler_learning_rate: f64,
    pub rho_init: f64,
    pub alpha_init: f64,
    pub rho_multiplier: f64,
    pub h_progress_ratio: f64,
    pub h_tolerance: f64,
    /// Relaxed graph samples per step.
    pub n_mc: usize,
    /// History window `p`.
    pub lags: usize,
    /// Latent confounder count `r`.
    pub latents: usize,
    pub seed: u64,
    /// Timesteps per minibatch; 0 means all.
    pub batch_size: usize,
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Hard graph samples with relaxed gradients during the last round.
    pub straight_through_final: bool,
    /// Steps at the start during which edge logits stay fixed while the
    /// networks fit the data under the initial edge probabilities.
    pub graph_warmup_steps: usize,
    pub initial_edge_probability: f64,
    /// Steps over which the KL gradient weight ramps linearly from 0 to 1,
    /// so the confounder encoder learns before the prior pulls it back.
    pub kl_warmup_steps: usize,
    /// Threshold used to binarize the learned graph.
    pub edge_threshold: f64,
    pub embedding_dim: usize,
    pub message_dim: usize,
    pub hidden_width: usize,
    pub embedding_init_std: f64,
    /// Pins every sample weight to 1.
    pub disable_scheduling: bool,
    /// Steps between run-log records.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            outer_rounds: 5,
            steps_per_round: 500,
            inner_steps: 20,
            scheduling_warmup: 2,
            lambda: 5.0,
            tau: 0.1,
            model_learning_rate: 1e-2,
            scheduler_learning_rate: 1e-3,
            rho_init: 1.0,
            alpha_init: 0.0,
            rho_multiplier: 10.0,
            h_progress_ratio: 0.25,
            h_tolerance: 1e-8,
            n_mc: 2,
            lags: 3,
            latents: 4,
            seed: 0,
            batch_size: 128,
            temperature_start: 1.0,
            temperature_end: 0.2,
            straight_through_final: false,
            graph_warmup_steps: 500,
            initial_edge_probability: 0.1,
            kl_warmup_steps: 0,
            edge_threshold: 0.5,
            embedding_dim: 8,
            message_dim: 8,
            hidden_width: 16,
            embedding_init_std: 0.1,
            disable_scheduling: false,
            log_every: 50,
        }
    }
}

pub const MAX_RHO: f64 = 1e16;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("outer_rounds", self.outer_rounds),
            ("steps_per_round", self.steps_per_round),
            ("inner_steps", self.inner_steps),
            ("scheduling_warmup", self.scheduling_warmup),
            ("n_mc", self.n_mc),
            ("lags", self.lags),
            ("embedding_dim", self.embedding_dim),
            ("message_dim", self.message_dim),
            ("hidden_width", self.hidden_width),
            ("log_every", self.log_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let positive = [
            ("model_learning_rate", self.model_learning_rate),
            ("scheduler_learning_rate", self.scheduler_learning_rate),
            ("rho_init", self.rho_init),
            ("rho_multiplier", self.rho_multiplier),
            ("h_tolerance", self.h_tolerance),
            ("temperature_start", self.temperature_start),
            ("temperature_end", self.temperature_end),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0) || !(self.alpha_init >= 0.0) || !(self.h_progress_ratio >= 0.0) {
            return Err(Error::Config(
                "lambda, alpha_init and h_progress_ratio must be nonnegative".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.initial_edge_probability > 0.0 && self.initial_edge_probability < 0.5) {
            return Err(Error::Config("initial_edge_probability must lie in (0, 0.5)".into()));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(Error::Config("edge_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn scm_config(&self) -> ScmConfig {
        ScmConfig {
            lags: self.lags,
            embedding_dim: self.embedding_dim,
            message_dim: self.message_dim,
            hidden_width: self.hidden_width,
            embedding_init_std: self.embedding_init_std,
        }
    }

    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            tau: self.tau,
            inner_steps: self.inner_steps,
            learning_rate: self.scheduler_learning_rate,
            hidden_width: self.hidden_width,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Lagrangian multiplier update between rounds.
pub fn lagrangian_update(
    sched: ConstraintSchedule,
    h_now: f64,
    h_prev: f64,
    rho_multiplier: f64,
    h_progress_ratio: f64,
) -> ConstraintSchedule {
    let mut next = sched;
    next.alpha = sched.alpha + sched.rho * h_now;
    if h_now > h_progress_ratio * h_prev {
        next.rho = (sched.rho * rho_multiplier).min(MAX_RHO);
    }
    next
}

/// One run-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// `"step"` or `"round"`.
    pub kind: String,
    pub round: usize,
    pub step: usize,
    pub data_fit: f64,
    pub graph_penalty: f64,
    pub confounder_kl: f64,
    pub total: f64,
    pub h: f64,
    /// Constraint on the binarized graph (round records only).
    pub h_binary: Option<f64>,
    pub rho: f64,
    pub alpha: f64,
    pub temperature: f64,
}

impl LogRecord {
    fn new(kind: &str, round: usize, step: usize, b: &ScoreBreakdown, s: &ConstraintSchedule, temp: f64) -> Self {
        Self {
            kind: kind.into(),
            round,
            step,
            data_fit: b.data_fit,
            graph_penalty: b.graph_penalty,
            confounder_kl: b.confounder_kl,
            total: b.total,
            h: b.h_value,
            h_binary: None,
            rho: s.rho,
            alpha: s.alpha,
            temperature: temp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub metric_names: Vec<String>,
    pub standardization: Vec<(f64, f64)>,
    /// Round-end scores, evaluated on all timesteps with fixed draws.
    pub history: Vec<ScoreBreakdown>,
    pub log: Vec<LogRecord>,
    pub state: ModelState,
    pub scheduler: SchedulerParams,
    pub weights: SampleWeights,
    pub schedule: ConstraintSchedule,
    /// Constraint value of the binarized learned graph.
    pub final_h: f64,
    pub converged: bool,
    pub rounds_run: usize,
    /// Excluded from reproducibility comparisons.
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn posterior(&self) -> &AdmgPosterior {
        &self.state.posterior
    }

    pub fn scm(&self) -> &ScmParameters {
        &self.state.scm
    }

    /// Edge probabilities over observed nodes plus soft bidirected part.
    pub fn soft_graph(&self) -> MixedGraph {
        decompose_probabilities(
            &self.state.posterior.probabilities(),
            self.state.posterior.num_observed(),
        )
        .expect("posterior is square")
    }

    pub fn binary_graph(&self) -> MixedGraph {
        decompose(&self.state.posterior, self.config.edge_threshold).expect("threshold validated")
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let post = &self.state.posterior;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            num_observed: post.num_observed(),
            num_latent: post.num_latent(),
            lags: self.state.scm.lags(),
            metric_names: self.metric_names.clone(),
            standardization: self.standardization.clone(),
            mask: Checkpoint::mask_of(post),
            posterior: post.clone(),
            scm: self.state.scm.clone(),
            weight_net: Some(self.scheduler.weight_net().clone()),
            tau: self.config.tau,
            config_fingerprint: self.config.fingerprint(),
        }
    }

    pub fn write_run_log(&self, path: &Path) -> Result<()> {
        write_run_log(&self.log, path)
    }

    /// Two-column `timestep,weight` CSV.
    pub fn write_weights_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("timestep,weight\n");
        for (t, w) in self.weights.values().iter().enumerate() {
            text.push_str(&format!("{t},{w:?}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

pub fn write_run_log(log: &[LogRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for rec in log {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Optional on-disk outputs produced while fitting.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Checkpoint rewritten at every round boundary.
    pub checkpoint: Option<PathBuf>,
    /// Run log rewritten at every round boundary.
    pub run_log: Option<PathBuf>,
}

pub fn fit(panel: &MetricPanel, config: &TrainConfig) -> Result<TrainReport> {
    fit_with_outputs(panel, config, &TrainOutputs::default())
}

pub fn fit_with_outputs(panel: &MetricPanel, config: &TrainConfig, outputs: &TrainOutputs) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let d = panel.num_metrics();
    let t_len = panel.num_timesteps();
    let p = config.lags;
    if d < 2 {
        return Err(Error::invalid(format!("at least 2 metrics are required, got {d}")));
    }
    if t_len <= p + 10 {
        return Err(Error::invalid(format!(
            "panel has {t_len} timesteps; more than {} are required",
            p + 10
        )));
    }
    let r = config.latents;
    let n = d + r;
    let (x, standardization) = panel.standardized();

    let root = RandomSource::new(config.seed);
    let mut init_rng = root.derive(1);
    let mut rng = root.derive(2);
    let mut state = ModelState {
        posterior: AdmgPosterior::new(d, r, config.initial_edge_probability)?,
        scm: ScmParameters::new(d, r, config.scm_config(), &mut init_rng)?,
    };
    let mut scheduler = SchedulerParams::new(d, config.scheduler_config(), &mut init_rng)?;
    let mut adam = Adam::new(state.num_params(), config.model_learning_rate);
    let graph_params = state.posterior.num_params();
    let mut schedule = ConstraintSchedule {
        lambda: config.lambda,
        rho: config.rho_init,
        alpha: config.alpha_init,
    };

    let all_steps: Vec<usize> = (p..t_len).collect();
    let batch = if config.batch_size == 0 || config.batch_size >= all_steps.len() {
        all_steps.len()
    } else {
        config.batch_size
    };
    let total_steps = config.outer_rounds * config.steps_per_round;
    let mut h_prev = f64::INFINITY;
    let mut prev_total: Option<f64> = None;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut weights = SampleWeights::uniform(t_len, config.tau)?;
    let mut step = 0usize;
    let mut params = state.params();
    let mut ts = vec![0usize; batch];
    let mut final_h = f64::INFINITY;
    let mut rounds_run = 0;
    let mut temperature = config.temperature_start;

    for round in 0..config.outer_rounds {
        rounds_run = round + 1;
        weights = if config.disable_scheduling {
            SampleWeights::uniform(t_len, config.tau)?
        } else {
            scheduler.weights(&x)?
        };
        let straight_through = config.straight_through_final && round + 1 == config.outer_rounds;
        for _ in 0..config.steps_per_round {
            temperature = anneal(config, step, total_steps);
            if batch == all_steps.len() {
                ts.copy_from_slice(&all_steps);
            } else {
                for slot in ts.iter_mut() {
                    *slot = all_steps[rng.index(all_steps.len())];
                }
                ts.sort_unstable();
            }
            let eps = DenseMatrix::from_fn(t_len, r, |_, _| rng.normal());
            let noise: Vec<DenseMatrix> = (0..config.n_mc)
                .map(|_| DenseMatrix::from_fn(n, n, |_, _| logistic_noise(rng.uniform_open())))
                .collect();
            let value = evaluate_objective(
                &state,
                &ObjectiveBatch {
                    x: &x,
                    weights: weights.values(),
                    timesteps: &ts,
                    confounder_noise: &eps,
                    graph_noise: &noise,
                    temperature,
                    straight_through,
                    schedule,
                    terms: TermMask::ALL,
                    kl_weight: kl_weight(config, step),
                },
            )
            .map_err(|e| stage_error(round, step, e))?;
            let mut grad = value.gradient;
            if step < config.graph_warmup_steps {
                grad[..graph_params].iter_mut().for_each(|g| *g = 0.0);
            }
            adam.ascend(&mut params, &grad);
            state.set_params(&params);
            step += 1;
            if step % config.log_every == 0 {
                log.push(LogRecord::new(
                    "step",
                    round,
                    step,
                    &value.breakdown,
                    &schedule,
                    temperature,
                ));
            }
        }

        let eval = round_evaluation(&state, &x, weights.values(), config, schedule, temperature, &root)?;
        let (h_soft, _) = magnified_constraint(&state.posterior.probabilities(), d)?;
        let binary = decompose(&state.posterior, config.edge_threshold)?;
        let h_bin = h_constraint(binary.directed(), binary.bidirected())?;
        final_h = h_bin;
        let mut rec = LogRecord::new("round", round, step, &eval, &schedule, temperature);
        rec.h = h_soft;
        rec.h_binary = Some(h_bin);
        log.push(rec);
        history.push(eval);

        let improvement = prev_total.map(|prev| (eval.total - prev) / prev.abs().max(1.0));
        prev_total = Some(eval.total);
        schedule = lagrangian_update(schedule, h_soft, h_prev, config.rho_multiplier, config.h_progress_ratio);
        h_prev = h_soft;

        if !config.disable_scheduling && round + 1 >= config.scheduling_warmup && round + 1 < config.outer_rounds {
            let scores = frozen_scores(&state, &x, config, temperature, &root, round)?;
            scheduler.inner_optimize(&x, &scores)?;
        }

        let report_so_far = |state: &ModelState, scheduler: &SchedulerParams| TrainReport {
            config: config.clone(),
            metric_names: panel.names().to_vec(),
            standardization: standardization.clone(),
            history: history.clone(),
            log: log.clone(),
            state: state.clone(),
            scheduler: scheduler.clone(),
            weights: weights.clone(),
            schedule,
            final_h,
            converged: final_h < config.h_tolerance,
            rounds_run,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        if outputs.checkpoint.is_some() || outputs.run_log.is_some() {
            let snapshot = report_so_far(&state, &scheduler);
            if let Some(path) = &outputs.checkpoint {
                snapshot.checkpoint().write_json(path)?;
            }
            if let Some(path) = &outputs.run_log {
                snapshot.write_run_log(path)?;
            }
        }
        if h_bin < config.h_tolerance && improvement.is_some_and(|imp| imp.abs() < 1e-4) {
            break;
        }
    }

    if !config.disable_scheduling && rounds_run >= config.scheduling_warmup && config.outer_rounds > 1 {
        weights = scheduler.weights(&x)?;
    }
    Ok(TrainReport {
        config: config.clone(),
        metric_names: panel.names().to_vec(),
        standardization,
        history,
        log,
        state,
        scheduler,
        weights,
        schedule,
        final_h,
        converged: final_h < config.h_tolerance,
        rounds_run,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn anneal(config: &TrainConfig, step: usize, total: usize) -> f64 {
    let frac = if total > 1 {
        step as f64 / (total - 1) as f64
    } else {
        1.0
    };
    config.temperature_start + (config.temperature_end - config.temperature_start) * frac
}

fn kl_weight(config: &TrainConfig, step: usize) -> f64 {
    if config.kl_warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / config.kl_warmup_steps as f64).min(1.0)
    }
}

fn stage_error(round: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { term } => Error::NonFinite {
            term: format!("{term} (round {round}, step {step})"),
        },
        other => other,
    }
}

/// Full-data score with draws fixed per round, so rounds are comparable.
fn round_evaluation(
    state: &ModelState,
    x: &DenseMatrix,
    weights: &[f64],
    config: &TrainConfig,
    schedule: ConstraintSchedule,
    temperature: f64,
    root: &RandomSource,
) -> Result<ScoreBreakdown> {
    let mut rng = root.derive(3);
    let n = state.posterior.num_nodes();
    let r = state.posterior.num_latent();
    let ts: Vec<usize> = (config.lags..x.rows()).collect();
    let eps = DenseMatrix::from_fn(x.rows(), r, |_, _| rng.normal());
    let noise: Vec<DenseMatrix> = (0..config.n_mc)
        .map(|_| DenseMatrix::from_fn(n, n, |_, _| logistic_noise(rng.uniform_open())))
        .collect();
    Ok(evaluate_objective(
        state,
        &ObjectiveBatch {
            x,
            weights,
            timesteps: &ts,
            confounder_noise: &eps,
            graph_noise: &noise,
            temperature,
            straight_through: false,
            schedule,
            terms: TermMask::ALL,
            kl_weight: 1.0,
        },
    )?
    .breakdown)
}

/// Per-timestep `log-likelihood - KL` with the model frozen; the first `p`
/// timesteps only carry the KL part.
fn frozen_scores(
    state: &ModelState,
    x: &DenseMatrix,
    config: &TrainConfig,
    temperature: f64,
    root: &RandomSource,
    round: usize,
) -> Result<Vec<f64>> {
    let mut rng = root.derive(100 + round as u64);
    let n = state.posterior.num_nodes();
    let r = state.posterior.num_latent();
    let logits = state.posterior.logits();
    let graphs: Vec<DenseMatrix> = (0..config.n_mc)
        .map(|_| {
            DenseMatrix::from_fn(n, n, |i, j| {
                if state.posterior.is_allowed(i, j) {
                    crate::numerics::relaxed_bernoulli_with_noise(
                        logits[(i, j)],
                        temperature,
                        logistic_noise(rng.uniform_open()),
                    )
                    .0
                } else {
                    0.0
                }
            })
        })
        .collect();
    let (c, kl) = if r > 0 {
        let cp = state.scm.encode_panel(x)?;
        let eps = DenseMatrix::from_fn(x.rows(), r, |_, _| rng.normal());
        let kl: Vec<f64> = (0..x.rows())
            .map(|t| {
                (0..r)
                    .map(|k| {
                        let (m, s) = (cp.mu[(t, k)], cp.sigma[(t, k)]);
                        0.5 * (m * m + s * s - 1.0) - s.ln()
                    })
                    .sum()
            })
            .collect();
        (cp.sample(&eps), kl)
    } else {
        (DenseMatrix::zeros(x.rows(), 0), vec![0.0; x.rows()])
    };
    let per_node = node_log_likelihoods(&state.scm, x, &c, &graphs)?;
    let p = config.lags;
    let mut scores: Vec<f64> = kl.iter().map(|k| -k).collect();
    for col in 0..per_node.cols() {
        scores[p + col] += (0..per_node.rows()).map(|j| per_node[(j, col)]).sum::<f64>();
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrangian_examples() {
        let s = ConstraintSchedule {
            lambda: 5.0,
            rho: 1.0,
            alpha: 0.0,
        };
        assert_eq!(lagrangian_update(s, 0.0, 1.0, 10.0, 0.25), s);
        let next = lagrangian_update(s, 1.0, 1.0, 10.0, 0.25);
        assert_eq!((next.alpha, next.rho), (1.0, 10.0));
        let mut cur = s;
        for _ in 0..40 {
            cur = lagrangian_update(cur, 1.0, 1.0, 10.0, 0.25);
        }
        assert_eq!(cur.rho, MAX_RHO);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            tau: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let a = TrainConfig::default().fingerprint();
        assert_eq!(a, TrainConfig::default().fingerprint());
        assert_eq!(a.len(), 64);
    }
}
