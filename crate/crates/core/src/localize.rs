//! Root cause localization: a restart random walk over the learned directed
//! graph (bidirected part ignored), a per-node anomaly rank, and the
//! combined potential root cause score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decompose_probabilities, Checkpoint, ModelState};
use crate::numerics::{DenseMatrix, RandomSource};
use crate::panel::MetricPanel;
use crate::score::node_log_likelihoods;

/// An alarm on front-end metric `frontend_node` at timestep `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub frontend_node: usize,
    pub t: usize,
}

/// Alarm as stored on disk: the front-end metric is referenced by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub frontend: String,
    pub t: usize,
}

impl AlarmRecord {
    pub fn resolve(&self, names: &[String]) -> Result<Alarm> {
        let frontend_node = names
            .iter()
            .position(|n| n == &self.frontend)
            .ok_or_else(|| Error::invalid(format!("unknown node name `{}` in alarm", self.frontend)))?;
        Ok(Alarm {
            frontend_node,
            t: self.t,
        })
    }
}

pub fn read_alarms(path: &Path) -> Result<Vec<AlarmRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_alarms(alarms: &[AlarmRecord], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(alarms)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    /// Restart probability.
    pub phi: f64,
    /// Weight of the walk score against the anomaly rank.
    pub psi: f64,
    pub walk_steps: u64,
    pub top_k: usize,
    /// Threshold applied to edge probabilities before building the walk.
    pub edge_threshold: f64,
    /// Walk on edge probabilities instead of the binarized graph.
    pub weighted_walk: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            phi: 0.15,
            psi: 0.5,
            walk_steps: 100_000,
            top_k: 5,
            edge_threshold: 0.5,
            weighted_walk: false,
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) || !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::Config("phi and psi must lie in [0, 1]".into()));
        }
        if self.walk_steps == 0 || self.top_k == 0 {
            return Err(Error::Config("walk_steps and top_k must be at least 1".into()));
        }
        if !(self.edge_threshold > 0.0 && self.edge_threshold < 1.0) {
            return Err(Error::Config("edge_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Walk operator on the reversed graph: row `i` spreads `1 - phi` over the
/// parents of `i` in proportion to the edge weights. Rows of nodes without
/// parents are zero; their whole mass restarts.
pub fn transition_matrix(directed: &DenseMatrix, phi: f64) -> Result<DenseMatrix> {
    if !directed.is_square() {
        return Err(Error::dim(
            "transition matrix input",
            "square",
            format!("{}x{}", directed.rows(), directed.cols()),
        ));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::invalid(format!("phi must lie in [0, 1], got {phi}")));
    }
    if directed.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("edge weights must be finite and nonnegative"));
    }
    let d = directed.rows();
    let mut h = DenseMatrix::zeros(d, d);
    for i in 0..d {
        let total: f64 = (0..d).map(|k| directed[(k, i)]).sum();
        if total > 0.0 {
            for j in 0..d {
                h[(i, j)] = (1.0 - phi) * directed[(j, i)] / total;
            }
        }
    }
    Ok(h)
}

/// Visit counts of one walker over `steps` steps from `frontend`. The
/// current node is counted before each move; leftover row mass restarts.
pub fn random_walk(h: &DenseMatrix, frontend: usize, steps: u64, rng: &mut RandomSource) -> Result<Vec<u64>> {
    let d = h.rows();
    if frontend >= d {
        return Err(Error::OutOfRange {
            index: frontend,
            size: d,
        });
    }
    if steps == 0 {
        return Err(Error::invalid("walk needs at least one step"));
    }
    let mut zeta = vec![0u64; d];
    let mut at = frontend;
    for _ in 0..steps {
        zeta[at] += 1;
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut next = frontend;
        for (j, &p) in h.row(at).iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        at = next;
    }
    Ok(zeta)
}

/// Fraction of other timesteps whose log-likelihood exceeds the one at `t`,
/// ties counting half. `loglik` is `d x T`.
pub fn anomaly_rank(loglik: &DenseMatrix, t: usize) -> Result<Vec<f64>> {
    let len = loglik.cols();
    if len < 2 {
        return Err(Error::invalid("anomaly rank needs at least 2 timesteps"));
    }
    if t >= len {
        return Err(Error::OutOfRange { index: t, size: len });
    }
    Ok((0..loglik.rows())
        .map(|i| {
            let row = loglik.row(i);
            let at = row[t];
            let mut count = 0.0;
            for (u, &v) in row.iter().enumerate() {
                if u != t {
                    if v > at {
                        count += 1.0;
                    } else if v == at {
                        count += 0.5;
                    }
                }
            }
            count / (len - 1) as f64
        })
        .collect())
}

/// Combined scores and the descending ranking (ties broken by node id).
pub fn root_cause_scores(zeta: &[f64], eta: &[f64], psi: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if zeta.len() != eta.len() {
        return Err(Error::dim("root cause scores", zeta.len(), eta.len()));
    }
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::invalid(format!("psi must lie in [0, 1], got {psi}")));
    }
    let top = zeta.iter().cloned().fold(0.0, f64::max);
    let s: Vec<f64> = zeta
        .iter()
        .zip(eta)
        .map(|(&z, &e)| {
            let zn = if top > 0.0 { z / top } else { 0.0 };
            psi * zn + (1.0 - psi) * e
        })
        .collect();
    let mut ranking: Vec<usize> = (0..s.len()).collect();
    ranking.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    Ok((s, ranking))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub alarm: Alarm,
    pub node_names: Vec<String>,
    pub zeta: Vec<u64>,
    pub eta: Vec<f64>,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub phi: f64,
    pub psi: f64,
    pub walk_steps: u64,
    pub top_k: usize,
}

impl RcaReport {
    pub fn top_k(&self) -> &[usize] {
        &self.ranking[..self.top_k.min(self.ranking.len())]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `rank,node,score,zeta_norm,eta` rows, best first.
    pub fn ranking_csv(&self) -> String {
        let top = self.zeta.iter().copied().max().unwrap_or(0) as f64;
        let mut out = String::from("rank,node,score,zeta_norm,eta\n");
        for (rank, &i) in self.ranking.iter().enumerate() {
            let zn = if top > 0.0 { self.zeta[i] as f64 / top } else { 0.0 };
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?}\n",
                rank + 1,
                self.node_names[i],
                self.scores[i],
                zn,
                self.eta[i]
            ));
        }
        out
    }
}

/// A learned model frozen for localization. Per-node log-likelihoods are
/// computed once under the binarized magnified graph with confounders at
/// their posterior means.
#[derive(Debug, Clone)]
pub struct Localizer {
    names: Vec<String>,
    walk: DenseMatrix,
    /// `d x (T - p)`; column `c` is timestep `p + c`.
    loglik: DenseMatrix,
    lags: usize,
    num_timesteps: usize,
    config: LocalizeConfig,
}

impl Localizer {
    /// `x` must already be standardized the way the model was trained.
    pub fn new(state: &ModelState, x: &DenseMatrix, names: Vec<String>, config: LocalizeConfig) -> Result<Self> {
        config.validate()?;
        let post = &state.posterior;
        let d = post.num_observed();
        if names.len() != d || x.cols() != d {
            return Err(Error::dim("localizer metrics", d, x.cols()));
        }
        let probs = post.probabilities();
        let soft = decompose_probabilities(&probs, d)?;
        let directed = if config.weighted_walk {
            soft.directed().clone()
        } else {
            soft.binarized(config.edge_threshold).directed().clone()
        };
        let walk = transition_matrix(&directed, config.phi)?;
        let hard = probs.map(|v| if v > config.edge_threshold { 1.0 } else { 0.0 });
        let c = if post.num_latent() > 0 {
            state.scm.encode_panel(x)?.mu
        } else {
            DenseMatrix::zeros(x.rows(), 0)
        };
        let loglik = node_log_likelihoods(&state.scm, x, &c, std::slice::from_ref(&hard))?;
        Ok(Self {
            names,
            walk,
            loglik,
            lags: state.scm.lags(),
            num_timesteps: x.rows(),
            config,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, panel: &MetricPanel, config: LocalizeConfig) -> Result<Self> {
        if panel.names() != ckpt.metric_names.as_slice() {
            return Err(Error::invalid("panel metric names differ from the checkpoint's"));
        }
        let x = DenseMatrix::from_fn(panel.num_timesteps(), panel.num_metrics(), |t, j| {
            let (mean, std) = ckpt.standardization[j];
            (panel.values()[(t, j)] - mean) / std
        });
        let state = ModelState {
            posterior: ckpt.posterior.clone(),
            scm: ckpt.scm.clone(),
        };
        Self::new(&state, &x, ckpt.metric_names.clone(), config)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transition(&self) -> &DenseMatrix {
        &self.walk
    }

    pub fn localize(&self, alarm: Alarm, rng: &mut RandomSource) -> Result<RcaReport> {
        let d = self.names.len();
        if alarm.frontend_node >= d {
            return Err(Error::OutOfRange {
                index: alarm.frontend_node,
                size: d,
            });
        }
        if alarm.t < self.lags || alarm.t >= self.num_timesteps {
            return Err(Error::invalid(format!(
                "alarm timestep {} outside [{}, {})",
                alarm.t, self.lags, self.num_timesteps
            )));
        }
        let zeta = random_walk(&self.walk, alarm.frontend_node, self.config.walk_steps, rng)?;
        let eta = anomaly_rank(&self.loglik, alarm.t - self.lags)?;
        let zf: Vec<f64> = zeta.iter().map(|&z| z as f64).collect();
        let (scores, ranking) = root_cause_scores(&zf, &eta, self.config.psi)?;
        Ok(RcaReport {
            alarm,
            node_names: self.names.clone(),
            zeta,
            eta,
            scores,
            ranking,
            phi: self.config.phi,
            psi: self.config.psi,
            walk_steps: self.config.walk_steps,
            top_k: self.config.top_k,
        })
    }
}
