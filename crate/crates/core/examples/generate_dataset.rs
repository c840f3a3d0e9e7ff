//! Generates a synthetic metric panel with masked confounders and injected
//! faults, writes it to a directory and prints what was produced.
//!
//! cargo run --example generate_dataset -- [OUTPUT_DIR] [SEED]

use std::path::PathBuf;

use partial_rca::synth::{generate_dataset, SynthConfig};

fn main() -> partial_rca::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partial-rca-dataset"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let config = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let ds = generate_dataset(&config)?;
    ds.write(&dir)?;

    let truth = &ds.truth;
    println!(
        "{} timesteps x {} observed metrics",
        ds.panel.num_timesteps(),
        ds.panel.num_metrics()
    );
    let masked: Vec<&str> = truth.masked.iter().map(|&i| truth.full_names[i].as_str()).collect();
    println!("masked confounders: {}", masked.join(", "));
    println!(
        "induced graph: {} directed edges, {} bidirected pairs",
        truth.directed.sum(),
        truth.bidirected.sum() / 2.0
    );
    for (f, alarm) in truth.faults.iter().zip(&ds.alarms) {
        let roots: Vec<&str> = f.root_causes.iter().map(|&i| truth.full_names[i].as_str()).collect();
        println!(
            "fault {:?} in [{}, {}) at {} (x{:.2}); alarm on {} at t = {}",
            f.window.mechanism,
            f.window.start,
            f.window.end,
            roots.join(" "),
            f.factor,
            alarm.frontend,
            alarm.t
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}
