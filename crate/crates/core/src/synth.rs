//! Synthetic benchmark: random weighted DAGs, a lagged linear (or tanh)
//! structural equation model, fault injection, and confounder masking.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::{write_alarms, Alarm, AlarmRecord};
use crate::numerics::{DenseMatrix, RandomSource};
use crate::panel::MetricPanel;

/// Edge weights inside `(-MIN_ABS_WEIGHT, MIN_ABS_WEIGHT)` are never drawn.
pub const MIN_ABS_WEIGHT: f64 = 0.3;

/// Erdős–Rényi DAG over a random topological order. Entry `(i, j)` is the
/// weight of `i -> j`.
pub fn sample_dag(
    num_nodes: usize,
    expected_degree: f64,
    weight_range: (f64, f64),
    rng: &mut RandomSource,
) -> Result<DenseMatrix> {
    if num_nodes < 2 {
        return Err(Error::invalid("a DAG needs at least 2 nodes"));
    }
    let (lo, hi) = weight_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("degenerate weight range [{lo}, {hi}]")));
    }
    // Lengths of the usable negative and positive pieces.
    let neg = (hi.min(-MIN_ABS_WEIGHT) - lo).max(0.0);
    let pos = (hi - lo.max(MIN_ABS_WEIGHT)).max(0.0);
    if neg + pos <= 0.0 {
        return Err(Error::invalid(format!(
            "weight range [{lo}, {hi}] lies inside the excluded band (-{MIN_ABS_WEIGHT}, {MIN_ABS_WEIGHT})"
        )));
    }
    let max_degree = (num_nodes - 1) as f64;
    if !(expected_degree >= 0.0 && expected_degree <= max_degree) {
        return Err(Error::invalid(format!(
            "expected degree must lie in [0, {max_degree}], got {expected_degree}"
        )));
    }
    let p = expected_degree / max_degree;
    let mut order: Vec<usize> = (0..num_nodes).collect();
    rng.shuffle(&mut order);
    let mut w = DenseMatrix::zeros(num_nodes, num_nodes);
    for a in 0..num_nodes {
        for b in a + 1..num_nodes {
            if rng.bernoulli(p) {
                let u = rng.uniform() * (neg + pos);
                let value = if u < neg {
                    lo + u
                } else {
                    lo.max(MIN_ABS_WEIGHT) + (u - neg)
                };
                w[(order[a], order[b])] = value;
            }
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemSpec {
    /// Delay of every causal edge.
    pub lag: usize,
    pub noise_scale: f64,
    /// `x_j^t = tanh(sum_i w_ij x_i^{t-lag}) + u_j^t` instead of the linear form.
    pub nonlinear: bool,
    /// AR(1) coefficient of the noise on `autocorrelated` nodes.
    pub noise_autocorrelation: f64,
    pub autocorrelated: Vec<usize>,
}

impl Default for SemSpec {
    fn default() -> Self {
        Self {
            lag: 1,
            noise_scale: 1.0,
            nonlinear: false,
            noise_autocorrelation: 0.0,
            autocorrelated: Vec::new(),
        }
    }
}

/// A simulated panel with the noise that produced it, so faults can be
/// re-propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    /// `T x d_full`.
    pub values: DenseMatrix,
    /// Per-timestep innovations `u`, `T x d_full`.
    pub noise: DenseMatrix,
    pub spec: SemSpec,
}

fn topological_order(dag: &DenseMatrix) -> Result<Vec<usize>> {
    let n = dag.rows();
    let mut indeg: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| dag[(i, j)] != 0.0).count()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for j in 0..n {
            if dag[(i, j)] != 0.0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::invalid("weighted graph has a directed cycle"));
    }
    Ok(order)
}

/// Lagged SEM driven by Gaussian innovations. A DAG weight matrix is
/// nilpotent, so the lag-`l` system has finite memory and never explodes.
pub fn generate_panel(
    dag: &DenseMatrix,
    timesteps: usize,
    spec: &SemSpec,
    rng: &mut RandomSource,
) -> Result<SimulatedPanel> {
    if !dag.is_square() {
        return Err(Error::dim("DAG", "square", format!("{}x{}", dag.rows(), dag.cols())));
    }
    topological_order(dag)?;
    if spec.lag == 0 || timesteps <= spec.lag {
        return Err(Error::invalid(format!(
            "need lag >= 1 and more than {} timesteps, got lag {} and {timesteps}",
            spec.lag, spec.lag
        )));
    }
    if !(spec.noise_scale > 0.0) || !(spec.noise_autocorrelation.abs() < 1.0) {
        return Err(Error::invalid("noise scale must be positive and |autocorrelation| < 1"));
    }
    let n = dag.rows();
    if let Some(&bad) = spec.autocorrelated.iter().find(|&&i| i >= n) {
        return Err(Error::OutOfRange { index: bad, size: n });
    }
    let mut noise = DenseMatrix::zeros(timesteps, n);
    for t in 0..timesteps {
        for j in 0..n {
            noise[(t, j)] = spec.noise_scale * rng.normal();
        }
    }
    let a = spec.noise_autocorrelation;
    if a != 0.0 {
        // Stationary start: innovations scaled so every u_j has the same variance.
        let innov = (1.0 - a * a).sqrt();
        for &j in &spec.autocorrelated {
            for t in 1..timesteps {
                noise[(t, j)] = a * noise[(t - 1, j)] + innov * noise[(t, j)];
            }
        }
    }
    let values = propagate(dag, &noise, spec, 0, &DenseMatrix::zeros(timesteps, n), None)?;
    Ok(SimulatedPanel {
        values,
        noise,
        spec: spec.clone(),
    })
}

/// Recomputes rows `from..T`; earlier rows are copied from `base`.
/// `weights_at(t)` may override the DAG weights for single timesteps.
fn propagate(
    dag: &DenseMatrix,
    noise: &DenseMatrix,
    spec: &SemSpec,
    from: usize,
    base: &DenseMatrix,
    weights_at: Option<&dyn Fn(usize) -> Option<DenseMatrix>>,
) -> Result<DenseMatrix> {
    let (len, n) = (noise.rows(), noise.cols());
    let mut x = base.clone();
    for t in from..len {
        let override_w = weights_at.and_then(|f| f(t));
        let w = override_w.as_ref().unwrap_or(dag);
        for j in 0..n {
            let mut drive = 0.0;
            if t >= spec.lag {
                for i in 0..n {
                    let wij = w[(i, j)];
                    if wij != 0.0 {
                        drive += wij * x[(t - spec.lag, i)];
                    }
                }
            }
            if spec.nonlinear {
                drive = drive.tanh();
            }
            x[(t, j)] = drive + noise[(t, j)];
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            term: "simulated panel".into(),
        });
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMechanism {
    /// Incoming edge weights of the root cause scaled by [2, 5] or sign-flipped.
    EdgeWeights,
    /// Noise of the root cause scaled by [3, 10].
    NoiseScale,
}

/// Faulty timesteps `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub start: usize,
    pub end: usize,
    pub mechanism: FaultMechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub window: FaultWindow,
    /// Perturbed nodes (full-graph ids).
    pub root_causes: Vec<usize>,
    /// Multiplier applied (negative for a sign flip).
    pub factor: f64,
}

/// Perturbs one node per window, drawn from `candidates`, then re-propagates
/// everything downstream. Edge faults need a candidate with parents.
pub fn inject_faults(
    sim: &SimulatedPanel,
    dag: &DenseMatrix,
    windows: &[FaultWindow],
    candidates: &[usize],
    rng: &mut RandomSource,
) -> Result<(DenseMatrix, Vec<InjectedFault>)> {
    if windows.is_empty() {
        return Ok((sim.values.clone(), Vec::new()));
    }
    let (len, n) = (sim.values.rows(), sim.values.cols());
    let mut sorted: Vec<&FaultWindow> = windows.iter().collect();
    sorted.sort_by_key(|w| w.start);
    for w in &sorted {
        if w.start < sim.spec.lag || w.end > len || w.start >= w.end {
            return Err(Error::invalid(format!(
                "fault window {}..{} must be nonempty inside [{}, {len})",
                w.start, w.end, sim.spec.lag
            )));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::invalid(format!(
                "fault windows {}..{} and {}..{} overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= n) {
        return Err(Error::OutOfRange { index: bad, size: n });
    }
    let with_parents: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&j| (0..n).any(|i| dag[(i, j)] != 0.0))
        .collect();

    let mut noise = sim.noise.clone();
    let mut edge_faults: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut faults = Vec::with_capacity(windows.len());
    for w in windows {
        let pool = match w.mechanism {
            FaultMechanism::EdgeWeights => &with_parents,
            FaultMechanism::NoiseScale => candidates,
        };
        if pool.is_empty() {
            return Err(Error::invalid(format!(
                "no candidate node for a {:?} fault",
                w.mechanism
            )));
        }
        let node = pool[rng.index(pool.len())];
        let factor = match w.mechanism {
            FaultMechanism::EdgeWeights => {
                if rng.bernoulli(0.5) {
                    -1.0
                } else {
                    rng.uniform_range(2.0, 5.0)
                }
            }
            FaultMechanism::NoiseScale => {
                let f = rng.uniform_range(3.0, 10.0);
                for t in w.start..w.end {
                    noise[(t, node)] *= f;
                }
                f
            }
        };
        if w.mechanism == FaultMechanism::EdgeWeights {
            edge_faults.push((w.start, w.end, node, factor));
        }
        faults.push(InjectedFault {
            window: *w,
            root_causes: vec![node],
            factor,
        });
    }
    let weights_at = |t: usize| -> Option<DenseMatrix> {
        let &(_, _, node, factor) = edge_faults.iter().find(|(s, e, _, _)| (*s..*e).contains(&t))?;
        let mut w = dag.clone();
        for i in 0..n {
            w[(i, node)] *= factor;
        }
        Some(w)
    };
    let from = sorted[0].start;
    let values = propagate(dag, &noise, &sim.spec, from, &sim.values, Some(&weights_at))?;
    Ok((values, faults))
}

/// `k` distinct nodes with at least two children, uniformly at random.
pub fn choose_confounders(dag: &DenseMatrix, k: usize, rng: &mut RandomSource) -> Result<Vec<usize>> {
    let n = dag.rows();
    let mut eligible: Vec<usize> = (0..n)
        .filter(|&i| (0..n).filter(|&j| dag[(i, j)] != 0.0).count() >= 2)
        .collect();
    if eligible.len() < k {
        return Err(Error::invalid(format!(
            "only {} nodes have two or more children; cannot mask {k}",
            eligible.len()
        )));
    }
    rng.shuffle(&mut eligible);
    let mut chosen = eligible[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Ground truth over the observed nodes after masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Weighted DAG over every node, before masking.
    pub full_dag: DenseMatrix,
    pub full_names: Vec<String>,
    /// Masked node ids (full numbering).
    pub masked: Vec<usize>,
    /// Full ids of the observed nodes, in panel column order.
    pub observed: Vec<usize>,
    /// Induced 0/1 directed graph over observed nodes.
    pub directed: DenseMatrix,
    /// Observed pairs sharing a masked parent.
    pub bidirected: DenseMatrix,
    pub faults: Vec<InjectedFault>,
}

impl GroundTruth {
    /// Root causes of fault `f` in observed numbering.
    pub fn observed_root_causes(&self, f: usize) -> Vec<usize> {
        self.faults[f]
            .root_causes
            .iter()
            .filter_map(|r| self.observed.iter().position(|o| o == r))
            .collect()
    }

    /// True when `t` falls inside any fault window.
    pub fn is_faulty(&self, t: usize) -> bool {
        self.faults.iter().any(|f| (f.window.start..f.window.end).contains(&t))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Drops `masked` columns and derives the induced mixed graph.
pub fn mask_nodes(
    values: &DenseMatrix,
    dag: &DenseMatrix,
    masked: &[usize],
    faults: Vec<InjectedFault>,
) -> Result<(MetricPanel, GroundTruth)> {
    let n = dag.rows();
    if values.cols() != n {
        return Err(Error::dim("panel columns", n, values.cols()));
    }
    if let Some(&bad) = masked.iter().find(|&&i| i >= n) {
        return Err(Error::OutOfRange { index: bad, size: n });
    }
    let full_names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let observed: Vec<usize> = (0..n).filter(|i| !masked.contains(i)).collect();
    let d = observed.len();
    let directed = DenseMatrix::from_fn(d, d, |a, b| {
        if dag[(observed[a], observed[b])] != 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let mut bidirected = DenseMatrix::zeros(d, d);
    for &m in masked {
        for a in 0..d {
            for b in 0..d {
                if a != b && dag[(m, observed[a])] != 0.0 && dag[(m, observed[b])] != 0.0 {
                    bidirected[(a, b)] = 1.0;
                }
            }
        }
    }
    let panel_values = DenseMatrix::from_fn(values.rows(), d, |t, a| values[(t, observed[a])]);
    let names = observed.iter().map(|&i| full_names[i].clone()).collect();
    let panel = MetricPanel::new(names, panel_values)?;
    let mut masked_sorted = masked.to_vec();
    masked_sorted.sort_unstable();
    Ok((
        panel,
        GroundTruth {
            full_dag: dag.clone(),
            full_names,
            masked: masked_sorted,
            observed,
            directed,
            bidirected,
            faults,
        },
    ))
}

/// Chooses `k` confounders then masks them.
pub fn mask_confounders(
    values: &DenseMatrix,
    dag: &DenseMatrix,
    k: usize,
    rng: &mut RandomSource,
) -> Result<(MetricPanel, GroundTruth)> {
    let masked = choose_confounders(dag, k, rng)?;
    mask_nodes(values, dag, &masked, Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismChoice {
    EdgeWeights,
    NoiseScale,
    /// Alternate, starting with noise.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub num_masked: usize,
    pub timesteps: usize,
    pub expected_degree: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub noise_scale: f64,
    pub lag: usize,
    pub nonlinear: bool,
    /// AR(1) noise coefficient of the masked nodes.
    pub confounder_autocorrelation: f64,
    pub fault_fraction: f64,
    pub fault_windows: usize,
    pub fault_mechanism: MechanismChoice,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 24,
            num_masked: 4,
            timesteps: 1000,
            expected_degree: 2.0,
            weight_low: -1.5,
            weight_high: 1.5,
            noise_scale: 1.0,
            lag: 1,
            nonlinear: false,
            confounder_autocorrelation: 0.8,
            fault_fraction: 0.1,
            fault_windows: 5,
            fault_mechanism: MechanismChoice::Mixed,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub panel: MetricPanel,
    pub truth: GroundTruth,
    pub alarms: Vec<AlarmRecord>,
}

/// Evenly spread windows: window `w` sits at a random offset inside the
/// `w`-th of `count` equal segments of `[lag, T)`.
pub fn place_windows(
    timesteps: usize,
    lag: usize,
    fraction: f64,
    count: usize,
    mechanism: MechanismChoice,
    rng: &mut RandomSource,
) -> Result<Vec<FaultWindow>> {
    if count == 0 || fraction <= 0.0 {
        return Ok(Vec::new());
    }
    if !(fraction < 1.0) {
        return Err(Error::invalid("fault fraction must be below 1"));
    }
    let span = timesteps.saturating_sub(lag);
    let len = ((timesteps as f64 * fraction / count as f64).round() as usize).max(1);
    let seg = span / count;
    if seg < len {
        return Err(Error::invalid(format!(
            "{count} fault windows of length {len} do not fit in {span} timesteps"
        )));
    }
    Ok((0..count)
        .map(|w| {
            let start = lag + w * seg + rng.index(seg - len + 1);
            let mechanism = match mechanism {
                MechanismChoice::EdgeWeights => FaultMechanism::EdgeWeights,
                MechanismChoice::NoiseScale => FaultMechanism::NoiseScale,
                MechanismChoice::Mixed if w % 2 == 0 => FaultMechanism::NoiseScale,
                MechanismChoice::Mixed => FaultMechanism::EdgeWeights,
            };
            FaultWindow {
                start,
                end: start + len,
                mechanism,
            }
        })
        .collect())
}

const DAG_ATTEMPTS: u64 = 100;

/// Full benchmark bundle. Each fault raises one alarm at the middle of its
/// window on an observed descendant of the root cause (the root itself
/// when it has none).
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset> {
    let root = RandomSource::new(config.seed);
    // Sparse graphs may lack enough confounder candidates; redraw.
    let mut attempt = 0;
    let (dag, masked) = loop {
        let dag = sample_dag(
            config.num_nodes,
            config.expected_degree,
            (config.weight_low, config.weight_high),
            &mut root.derive(0).derive(attempt),
        )?;
        match choose_confounders(&dag, config.num_masked, &mut root.derive(1)) {
            Ok(m) => break (dag, m),
            Err(e) if attempt + 1 >= DAG_ATTEMPTS => return Err(e),
            Err(_) => attempt += 1,
        }
    };
    let spec = SemSpec {
        lag: config.lag,
        noise_scale: config.noise_scale,
        nonlinear: config.nonlinear,
        noise_autocorrelation: config.confounder_autocorrelation,
        autocorrelated: masked.clone(),
    };
    let sim = generate_panel(&dag, config.timesteps, &spec, &mut root.derive(2))?;
    let mut rng = root.derive(3);
    let windows = place_windows(
        config.timesteps,
        config.lag.max(1),
        config.fault_fraction,
        config.fault_windows,
        config.fault_mechanism,
        &mut rng,
    )?;
    let candidates: Vec<usize> = (0..config.num_nodes).filter(|i| !masked.contains(i)).collect();
    let (values, faults) = inject_faults(&sim, &dag, &windows, &candidates, &mut rng)?;
    let (panel, truth) = mask_nodes(&values, &dag, &masked, faults)?;
    let reach = reachability(&truth.directed);
    let mut alarms = Vec::with_capacity(truth.faults.len());
    for (f, fault) in truth.faults.iter().enumerate() {
        let roots = truth.observed_root_causes(f);
        let r = roots[0];
        let below: Vec<usize> = (0..panel.num_metrics()).filter(|&j| reach[(r, j)] != 0.0).collect();
        let frontend = if below.is_empty() {
            r
        } else {
            below[rng.index(below.len())]
        };
        let alarm = Alarm {
            frontend_node: frontend,
            t: (fault.window.start + fault.window.end) / 2,
        };
        alarms.push(AlarmRecord {
            frontend: panel.names()[alarm.frontend_node].clone(),
            t: alarm.t,
        });
    }
    Ok(Dataset { panel, truth, alarms })
}

/// Transitive closure (excluding the trivial path).
fn reachability(directed: &DenseMatrix) -> DenseMatrix {
    let d = directed.rows();
    let mut r = directed.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    for k in 0..d {
        for i in 0..d {
            if r[(i, k)] != 0.0 {
                for j in 0..d {
                    if r[(k, j)] != 0.0 {
                        r[(i, j)] = 1.0;
                    }
                }
            }
        }
    }
    r
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const ALARMS_FILE: &str = "alarms.json";

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        self.panel.write_csv_file(&dir.join(METRICS_FILE))?;
        self.truth.write_json(&dir.join(GROUND_TRUTH_FILE))?;
        write_alarms(&self.alarms, &dir.join(ALARMS_FILE))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            panel: MetricPanel::read_csv_file(&dir.join(METRICS_FILE))?,
            truth: GroundTruth::read_json(&dir.join(GROUND_TRUTH_FILE))?,
            alarms: crate::localize::read_alarms(&dir.join(ALARMS_FILE))?,
        })
    }
}
