//! Learns a causal graph from a small linear time-series SEM and compares
//! it with the true graph.
//!
//! cargo run --example discover_structure -- [SEED]

use partial_rca::evalmetrics::{graph_auc, graph_shd};
use partial_rca::numerics::RandomSource;
use partial_rca::panel::MetricPanel;
use partial_rca::synth::{generate_panel, sample_dag, SemSpec};
use partial_rca::trainer::{fit, TrainConfig};

fn main() -> partial_rca::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let rng = RandomSource::new(seed);
    let dag = sample_dag(6, 1.5, (-1.5, 1.5), &mut rng.derive(0))?;
    let sim = generate_panel(&dag, 1000, &SemSpec::default(), &mut rng.derive(1))?;
    let panel = MetricPanel::unnamed(sim.values)?;

    let config = TrainConfig {
        latents: 0,
        seed,
        ..TrainConfig::default()
    };
    let report = fit(&panel, &config)?;
    let soft = report.soft_graph();
    let hard = report.binary_graph();

    println!("edge     true weight   P(edge)");
    for i in 0..6 {
        for j in 0..6 {
            let p = soft.directed()[(i, j)];
            if dag[(i, j)] != 0.0 || p > 0.2 {
                println!("x{i} -> x{j}   {:+.2}         {p:.3}", dag[(i, j)]);
            }
        }
    }
    let truth = dag.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    println!(
        "AUC {:.3}, SHD {}, h(binarized) = {:e}, {} rounds in {:.1}s",
        graph_auc(soft.directed(), &truth)?,
        graph_shd(hard.directed(), &truth)?,
        report.final_h,
        report.rounds_run,
        report.wall_time_secs
    );
    Ok(())
}
