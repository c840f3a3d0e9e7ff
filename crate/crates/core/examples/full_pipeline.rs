//! Runs generate, discover, localize and evaluate end to end with the
//! default protocol, optionally with one component switched off.
//!
//! cargo run --example full_pipeline -- [OUTPUT_DIR] [SEED] [full|no-dc|no-sh]

use std::path::PathBuf;

use partial_rca::pipeline::{cmd_run, run_label, RunConfig};

fn main() -> partial_rca::Result<()> {
    let mut args = std::env::args().skip(1);
    let output_dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("partial-rca-run"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = RunConfig {
        seed,
        output_dir,
        ..RunConfig::default()
    };
    match args.next().as_deref() {
        Some("no-dc") => config.ablation.disable_deconfounding = true,
        Some("no-sh") => config.ablation.disable_scheduling = true,
        _ => {}
    }

    let out = cmd_run(&config)?;
    let m = &out.metrics;
    println!("{} on seed {seed}: {} alarms", run_label(&config), m.num_cases);
    let pr: Vec<String> = m.precision_at.iter().map(|v| format!("{v:.3}")).collect();
    println!(
        "PR@1..5 {}  PR@Avg {:.3}  RankScore {:.4}",
        pr.join(" "),
        m.precision_avg,
        m.rank_score
    );
    if let (Some(auc), Some(shd)) = (m.auc, m.shd) {
        println!("graph AUC {auc:.3}, SHD {shd}");
    }
    for (stage, secs) in &out.manifest.stage_seconds {
        println!("{stage:>10}: {secs:.1}s");
    }
    println!("artifacts under {}", config.output_dir.display());
    Ok(())
}
