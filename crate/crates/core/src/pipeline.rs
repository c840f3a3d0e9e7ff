//! Run configuration and the batch commands behind the CLI. Every command
//! reads and writes plain files so stages can be run separately or chained
//! by [`cmd_run`].

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{graph_auc, graph_shd, AlarmCase, MetricsReport};
use crate::localize::{read_alarms, LocalizeConfig, Localizer, RcaReport};
use crate::model::{Checkpoint, MixedGraph};
use crate::numerics::{DenseMatrix, RandomSource};
use crate::panel::MetricPanel;
use crate::synth::{generate_dataset, Dataset, GroundTruth, SynthConfig, ALARMS_FILE, GROUND_TRUTH_FILE, METRICS_FILE};
use crate::trainer::{fit_with_outputs, hex_digest, TrainConfig, TrainOutputs, TrainReport};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "PARTIAL_RCA_OUTPUT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Fit without latent confounders (`latents = 0`).
    pub disable_deconfounding: bool,
    /// Keep every sample weight at 1.
    pub disable_scheduling: bool,
}

/// Input files for commands that do not generate their own data. Unset
/// entries default to the bundle and model written under `output_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub metrics: Option<PathBuf>,
    pub alarms: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Optional hyperparameter sweeps run by [`cmd_run`] after the main run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweeps {
    pub lambda: Vec<f64>,
    pub latents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, training and the localization walks.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ablation: Ablation,
    pub data: DataPaths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub localize: LocalizeConfig,
    pub sweeps: Sweeps,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("partial-rca-output"),
            ablation: Ablation::default(),
            data: DataPaths::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            localize: LocalizeConfig::default(),
            sweeps: Sweeps::default(),
        }
    }
}

impl RunConfig {
    /// The nested `train.seed` and `synth.seed` keys are rejected; the
    /// top-level `seed` drives both.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for section in ["train", "synth"] {
            if value.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(Error::Config(format!(
                    "`{section}.seed` is not allowed; set the top-level `seed`"
                )));
            }
        }
        let mut cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.synth.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut value = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for section in ["train", "synth"] {
            if let Some(toml::Value::Table(t)) = value.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string_pretty(&value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.localize.validate()?;
        if self.synth.num_masked >= self.synth.num_nodes {
            return Err(Error::Config("synth.num_masked must be below synth.num_nodes".into()));
        }
        Ok(())
    }

    /// Training settings with the seed and ablation switches applied.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        if self.ablation.disable_deconfounding {
            t.latents = 0;
        }
        if self.ablation.disable_scheduling {
            t.disable_scheduling = true;
        }
        t
    }

    pub fn effective_synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join("model")
    }

    pub fn rca_dir(&self) -> PathBuf {
        self.output_dir.join("rca")
    }

    fn metrics_path(&self) -> PathBuf {
        self.data
            .metrics
            .clone()
            .unwrap_or_else(|| self.data_dir().join(METRICS_FILE))
    }

    fn alarms_path(&self) -> PathBuf {
        self.data
            .alarms
            .clone()
            .unwrap_or_else(|| self.data_dir().join(ALARMS_FILE))
    }

    fn ground_truth_path(&self) -> PathBuf {
        self.data
            .ground_truth
            .clone()
            .unwrap_or_else(|| self.data_dir().join(GROUND_TRUTH_FILE))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.data
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.model_dir().join(CHECKPOINT_FILE))
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RUN_LOG_FILE: &str = "run_log.jsonl";
pub const GRAPH_FILE: &str = "graph.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const METRICS_REPORT_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Writes the synthetic bundle to `<output>/data`.
pub fn cmd_generate(config: &RunConfig) -> Result<Dataset> {
    let dataset = generate_dataset(&config.effective_synth())?;
    dataset.write(&config.data_dir())?;
    Ok(dataset)
}

/// Learned graph document written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedGraph {
    pub names: Vec<String>,
    pub threshold: f64,
    /// Edge probabilities over observed nodes.
    pub directed_probabilities: DenseMatrix,
    pub bidirected_probabilities: DenseMatrix,
    pub directed_edges: Vec<(String, String)>,
    pub bidirected_edges: Vec<(String, String)>,
    /// Constraint value of the binarized graph.
    pub h: f64,
    pub converged: bool,
}

impl LearnedGraph {
    pub fn from_report(report: &TrainReport) -> Self {
        let soft = report.soft_graph();
        let hard = soft.binarized(report.config.edge_threshold);
        let names = report.metric_names.clone();
        let named = |edges: Vec<(usize, usize)>| {
            edges
                .into_iter()
                .map(|(i, j)| (names[i].clone(), names[j].clone()))
                .collect()
        };
        Self {
            directed_edges: named(hard.directed_edges()),
            bidirected_edges: named(hard.bidirected_edges()),
            names: names.clone(),
            threshold: report.config.edge_threshold,
            directed_probabilities: soft.directed().clone(),
            bidirected_probabilities: soft.bidirected().clone(),
            h: report.final_h,
            converged: report.converged,
        }
    }

    pub fn soft(&self) -> Result<MixedGraph> {
        MixedGraph::new(
            self.directed_probabilities.clone(),
            self.bidirected_probabilities.clone(),
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fits the model on `metrics` and writes checkpoint, run log, learned
/// graph and sample weights to `<output>/model`.
pub fn cmd_discover(config: &RunConfig, metrics: &Path) -> Result<TrainReport> {
    let panel = MetricPanel::read_csv_file(metrics)?;
    let dir = config.model_dir();
    create_dir(&dir)?;
    let outputs = TrainOutputs {
        checkpoint: Some(dir.join(CHECKPOINT_FILE)),
        run_log: Some(dir.join(RUN_LOG_FILE)),
    };
    let report = fit_with_outputs(&panel, &config.effective_train(), &outputs)?;
    report.checkpoint().write_json(&dir.join(CHECKPOINT_FILE))?;
    report.write_run_log(&dir.join(RUN_LOG_FILE))?;
    report.write_weights_csv(&dir.join(WEIGHTS_FILE))?;
    LearnedGraph::from_report(&report).write_json(&dir.join(GRAPH_FILE))?;
    Ok(report)
}

/// One report per alarm, written as `alarm_<i>.json` plus
/// `alarm_<i>_ranking.csv` under `<output>/rca`.
pub fn cmd_localize(config: &RunConfig, checkpoint: &Path, metrics: &Path, alarms: &Path) -> Result<Vec<RcaReport>> {
    let ckpt = Checkpoint::read_json(checkpoint)?;
    let panel = MetricPanel::read_csv_file(metrics)?;
    let records = read_alarms(alarms)?;
    if records.is_empty() {
        return Err(Error::invalid(format!("{} lists no alarms", alarms.display())));
    }
    let localizer = Localizer::from_checkpoint(&ckpt, &panel, config.localize.clone())?;
    let dir = config.rca_dir();
    create_dir(&dir)?;
    let root = RandomSource::new(config.seed).derive(7);
    let mut reports = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let alarm = rec.resolve(localizer.names())?;
        let report = localizer.localize(alarm, &mut root.derive(i as u64))?;
        report.write_json(&dir.join(format!("alarm_{i}.json")))?;
        write_text(&dir.join(format!("alarm_{i}_ranking.csv")), &report.ranking_csv())?;
        reports.push(report);
    }
    Ok(reports)
}

/// Reads every `alarm_<i>.json` under `dir`, in index order.
pub fn read_reports(dir: &Path) -> Result<Vec<RcaReport>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(idx) = name.strip_prefix("alarm_").and_then(|s| s.strip_suffix(".json")) {
            if let Ok(i) = idx.parse::<usize>() {
                found.push((i, path.clone()));
            }
        }
    }
    found.sort();
    found.into_iter().map(|(_, p)| RcaReport::read_json(&p)).collect()
}

/// Scores rankings against the ground truth. Each report is matched to the
/// fault window containing its alarm timestep. Graph metrics are added
/// when a learned graph is given.
pub fn evaluate_reports(
    label: &str,
    reports: &[RcaReport],
    truth: &GroundTruth,
    graph: Option<&LearnedGraph>,
) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no rankings to evaluate"));
    }
    let names: Vec<String> = truth.observed.iter().map(|&i| truth.full_names[i].clone()).collect();
    let mut cases = Vec::with_capacity(reports.len());
    for rep in reports {
        if rep.node_names != names {
            return Err(Error::invalid(
                "ranking node names differ from the ground truth's observed nodes",
            ));
        }
        let f = truth
            .faults
            .iter()
            .position(|f| (f.window.start..f.window.end).contains(&rep.alarm.t))
            .ok_or_else(|| Error::invalid(format!("alarm at timestep {} matches no fault window", rep.alarm.t)))?;
        cases.push(AlarmCase::new(truth.observed_root_causes(f), rep.ranking.clone())?);
    }
    let mut report = MetricsReport::from_cases(label, &cases)?;
    if let Some(g) = graph {
        if g.names != names {
            return Err(Error::invalid(
                "learned graph node names differ from the ground truth's",
            ));
        }
        report.auc = graph_auc(&g.directed_probabilities, &truth.directed).ok();
        let hard = g
            .directed_probabilities
            .map(|v| if v > g.threshold { 1.0 } else { 0.0 });
        report.shd = Some(graph_shd(&hard, &truth.directed)?);
    }
    Ok(report)
}

/// Writes `metrics.json` and `metrics.csv` into the output directory.
pub fn cmd_evaluate(
    config: &RunConfig,
    reports_dir: &Path,
    ground_truth: &Path,
    graph: Option<&Path>,
) -> Result<MetricsReport> {
    let reports = read_reports(reports_dir)?;
    let truth = GroundTruth::read_json(ground_truth)?;
    let graph = graph.map(LearnedGraph::read_json).transpose()?;
    let report = evaluate_reports(&run_label(config), &reports, &truth, graph.as_ref())?;
    create_dir(&config.output_dir)?;
    report.write_json(&config.output_dir.join(METRICS_REPORT_FILE))?;
    report.write_csv(&config.output_dir.join(METRICS_CSV_FILE))?;
    Ok(report)
}

pub fn run_label(config: &RunConfig) -> String {
    match (
        config.ablation.disable_deconfounding,
        config.ablation.disable_scheduling,
    ) {
        (false, false) => "full".into(),
        (true, false) => "without_deconfounding".into(),
        (false, true) => "without_scheduling".into(),
        (true, true) => "without_both".into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_fingerprint: String,
    pub seed: u64,
    pub crate_version: String,
    pub rng: String,
    pub artifacts: Vec<PathBuf>,
    /// Seconds since the Unix epoch at completion.
    pub finished_at: u64,
    pub stage_seconds: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: Dataset,
    pub train: TrainReport,
    pub reports: Vec<RcaReport>,
    pub metrics: MetricsReport,
    pub manifest: Manifest,
}

/// generate, discover, localize and evaluate in one go, plus the weight
/// trace and any configured sweeps.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let dataset = stage("generate", cmd_generate(config))?;
    lap("generate", &mut timings);
    let train = stage("discover", cmd_discover(config, &config.metrics_path()))?;
    lap("discover", &mut timings);
    let reports = stage(
        "localize",
        cmd_localize(
            config,
            &config.checkpoint_path(),
            &config.metrics_path(),
            &config.alarms_path(),
        ),
    )?;
    lap("localize", &mut timings);
    let graph_path = config.model_dir().join(GRAPH_FILE);
    let metrics = stage(
        "evaluate",
        cmd_evaluate(
            config,
            &config.rca_dir(),
            &config.ground_truth_path(),
            Some(&graph_path),
        ),
    )?;
    lap("evaluate", &mut timings);

    let trace = config.output_dir.join("weights_trace.csv");
    stage("evaluate", write_weight_trace(&train, &dataset.truth, &trace))?;
    let mut artifacts = vec![
        config.data_dir().join(METRICS_FILE),
        config.ground_truth_path(),
        config.alarms_path(),
        config.checkpoint_path(),
        config.model_dir().join(RUN_LOG_FILE),
        graph_path,
        config.model_dir().join(WEIGHTS_FILE),
        config.rca_dir(),
        config.output_dir.join(METRICS_REPORT_FILE),
        config.output_dir.join(METRICS_CSV_FILE),
        trace,
    ];
    for (name, path) in stage("sweep", run_sweeps(config, &dataset))? {
        artifacts.push(path);
        lap(&name, &mut timings);
    }

    let manifest = Manifest {
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        rng: RandomSource::ALGORITHM.into(),
        artifacts,
        finished_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        stage_seconds: timings,
    };
    write_text(
        &config.output_dir.join(MANIFEST_FILE),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(RunOutcome {
        dataset,
        train,
        reports,
        metrics,
        manifest,
    })
}

/// `timestep,weight,faulty` for plotting learned weights over time.
pub fn write_weight_trace(train: &TrainReport, truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut text = String::from("timestep,weight,faulty\n");
    for (t, w) in train.weights.values().iter().enumerate() {
        text.push_str(&format!("{t},{w:?},{}\n", u8::from(truth.is_faulty(t))));
    }
    write_text(path, &text)
}

/// Each sweep value reruns discovery and localization on the same bundle
/// in its own subdirectory and appends one row to `sweep_<name>.csv`.
fn run_sweeps(config: &RunConfig, dataset: &Dataset) -> Result<Vec<(String, PathBuf)>> {
    let mut written = Vec::new();
    let sweeps: [(&str, Vec<RunConfig>); 2] = [
        (
            "lambda",
            config
                .sweeps
                .lambda
                .iter()
                .map(|&l| {
                    let mut c = config.clone();
                    c.train.lambda = l;
                    c.output_dir = config.output_dir.join(format!("sweep_lambda_{l}"));
                    c
                })
                .collect(),
        ),
        (
            "latents",
            config
                .sweeps
                .latents
                .iter()
                .map(|&r| {
                    let mut c = config.clone();
                    c.train.latents = r;
                    c.output_dir = config.output_dir.join(format!("sweep_latents_{r}"));
                    c
                })
                .collect(),
        ),
    ];
    for (name, runs) in sweeps {
        if runs.is_empty() {
            continue;
        }
        let mut text = format!("{name},{}\n", MetricsReport::CSV_HEADER);
        for c in runs {
            let train = cmd_discover(&c, &config.metrics_path())?;
            let reports = cmd_localize(&c, &c.checkpoint_path(), &config.metrics_path(), &config.alarms_path())?;
            let graph = LearnedGraph::from_report(&train);
            let m = evaluate_reports(&run_label(&c), &reports, &dataset.truth, Some(&graph))?;
            let value = if name == "lambda" {
                format!("{:?}", c.train.lambda)
            } else {
                c.train.latents.to_string()
            };
            text.push_str(&format!("{value},{}\n", m.csv_row()));
        }
        let path = config.output_dir.join(format!("sweep_{name}.csv"));
        write_text(&path, &text)?;
        written.push((format!("sweep_{name}"), path));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nseed = 3\n").is_err());
        let partial = RunConfig::from_toml("seed = 4\n[train]\nlambda = 2.0\n").unwrap();
        assert_eq!((partial.seed, partial.train.lambda), (4, 2.0));
        assert_eq!(partial.train.tau, 0.1);
    }

    #[test]
    fn ablations_apply() {
        let mut cfg = RunConfig::default();
        cfg.ablation.disable_deconfounding = true;
        cfg.seed = 9;
        let t = cfg.effective_train();
        assert_eq!((t.latents, t.seed, t.disable_scheduling), (0, 9, false));
        assert_eq!(run_label(&cfg), "without_deconfounding");
    }
}
