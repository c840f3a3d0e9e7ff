//! Scores hand-written rankings with the ranking and graph metrics.
//!
//! cargo run --example evaluate_rankings

use partial_rca::evalmetrics::{graph_auc, graph_shd, AlarmCase, MetricsReport};
use partial_rca::numerics::DenseMatrix;

fn main() -> partial_rca::Result<()> {
    let cases = vec![
        // Root found first.
        AlarmCase::new(vec![3], vec![3, 0, 1, 2, 4, 5])?,
        // Two roots, one in the top two and one in fifth place.
        AlarmCase::new(vec![1, 4], vec![1, 0, 2, 3, 4, 5])?,
        // Root missed until the end.
        AlarmCase::new(vec![5], vec![0, 1, 2, 3, 4, 5])?,
    ];
    let report = MetricsReport::from_cases("example", &cases)?;
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.csv_row());

    let truth = DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]])?;
    let scores = DenseMatrix::from_rows(&[vec![0.0, 0.9, 0.3], vec![0.2, 0.0, 0.6], vec![0.1, 0.7, 0.0]])?;
    let hard = scores.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    println!(
        "graph AUC {:.3}, SHD {}",
        graph_auc(&scores, &truth)?,
        graph_shd(&hard, &truth)?
    );
    Ok(())
}
