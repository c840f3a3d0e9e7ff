use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partial_rca::pipeline::{
    cmd_discover, cmd_evaluate, cmd_generate, cmd_localize, cmd_run, RunConfig, GRAPH_FILE, OUTPUT_ENV,
};
use partial_rca::Result;

#[derive(Parser)]
#[command(
    name = "partial-rca",
    version,
    about = "Root cause analysis on partially observed metric panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long, short, env = OUTPUT_ENV)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sparsity weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of latent confounders.
    #[arg(long)]
    latents: Option<usize>,
    /// Fit without latent confounders.
    #[arg(long)]
    disable_deconfounding: bool,
    /// Keep every sample weight at 1.
    #[arg(long)]
    disable_scheduling: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.train.lambda = l;
        }
        if let Some(r) = self.latents {
            cfg.train.latents = r;
        }
        cfg.ablation.disable_deconfounding |= self.disable_deconfounding;
        cfg.ablation.disable_scheduling |= self.disable_scheduling;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset bundle.
    Generate(Common),
    /// Learn the causal graph from a metrics CSV.
    Discover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Rank root causes for every alarm.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        alarms: PathBuf,
    },
    /// Score rankings (and optionally a learned graph) against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding `alarm_<i>.json` reports.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Generate, discover, localize and evaluate in one run.
    Run(Common),
    /// Print the default configuration.
    ConfigInit {
        /// Write to this file instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let ds = cmd_generate(&cfg)?;
            println!(
                "wrote {} timesteps x {} metrics, {} masked, {} faults, {} alarms to {}",
                ds.panel.num_timesteps(),
                ds.panel.num_metrics(),
                ds.truth.masked.len(),
                ds.truth.faults.len(),
                ds.alarms.len(),
                cfg.data_dir().display()
            );
        }
        Command::Discover { common, metrics } => {
            let cfg = common.load()?;
            let rep = cmd_discover(&cfg, &metrics)?;
            let g = rep.binary_graph();
            println!(
                "{} directed and {} bidirected edges, h = {:e}, converged = {}; wrote {}",
                g.directed_edges().len(),
                g.bidirected_edges().len(),
                rep.final_h,
                rep.converged,
                cfg.model_dir().join(GRAPH_FILE).display()
            );
        }
        Command::Localize {
            common,
            checkpoint,
            metrics,
            alarms,
        } => {
            let cfg = common.load()?;
            for (i, rep) in cmd_localize(&cfg, &checkpoint, &metrics, &alarms)?.iter().enumerate() {
                let top: Vec<&str> = rep.top_k().iter().map(|&n| rep.node_names[n].as_str()).collect();
                println!("alarm {i} (t = {}): {}", rep.alarm.t, top.join(" "));
            }
        }
        Command::Evaluate {
            common,
            reports,
            ground_truth,
            graph,
        } => {
            let cfg = common.load()?;
            let m = cmd_evaluate(&cfg, &reports, &ground_truth, graph.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Run(common) => {
            let cfg = common.load()?;
            let out = cmd_run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.metrics)?);
        }
        Command::ConfigInit { output } => {
            let text = RunConfig::default().to_toml()?;
            match output {
                Some(p) => std::fs::write(&p, text).map_err(|e| partial_rca::Error::File { path: p, source: e })?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
