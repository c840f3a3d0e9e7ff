//! Fits the model on a synthetic incident dataset, then ranks root causes
//! for every alarm and shows where the true causes landed.
//!
//! cargo run --example localize_root_causes -- [SEED]

use partial_rca::localize::{LocalizeConfig, Localizer};
use partial_rca::numerics::RandomSource;
use partial_rca::synth::{generate_dataset, SynthConfig};
use partial_rca::trainer::{fit, TrainConfig};

fn main() -> partial_rca::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ds = generate_dataset(&SynthConfig {
        num_nodes: 14,
        num_masked: 2,
        timesteps: 600,
        fault_windows: 3,
        seed,
        ..SynthConfig::default()
    })?;
    let train = fit(
        &ds.panel,
        &TrainConfig {
            latents: 2,
            seed,
            ..TrainConfig::default()
        },
    )?;
    let localizer = Localizer::from_checkpoint(&train.checkpoint(), &ds.panel, LocalizeConfig::default())?;

    let rng = RandomSource::new(seed).derive(7);
    for (i, record) in ds.alarms.iter().enumerate() {
        let alarm = record.resolve(localizer.names())?;
        let report = localizer.localize(alarm, &mut rng.derive(i as u64))?;
        let roots = ds.truth.observed_root_causes(i);
        let top: Vec<String> = report
            .top_k()
            .iter()
            .map(|&n| {
                let mark = if roots.contains(&n) { "*" } else { "" };
                format!("{}{mark}", report.node_names[n])
            })
            .collect();
        println!("alarm on {} at t = {}: {}", record.frontend, record.t, top.join(" "));
    }
    println!("(* marks a true root cause)");
    Ok(())
}
