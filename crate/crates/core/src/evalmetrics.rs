//! Ranking metrics for root cause localization and graph metrics for
//! structure recovery.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// True root causes of one alarm and the predicted ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmCase {
    pub roots: Vec<usize>,
    pub ranking: Vec<usize>,
}

impl AlarmCase {
    pub fn new(roots: Vec<usize>, ranking: Vec<usize>) -> Result<Self> {
        if roots.is_empty() {
            return Err(Error::invalid("alarm case without root causes"));
        }
        if ranking.is_empty() {
            return Err(Error::invalid("alarm case with an empty ranking"));
        }
        let mut seen = std::collections::HashSet::new();
        if !ranking.iter().all(|r| seen.insert(*r)) {
            return Err(Error::invalid("ranking repeats a node"));
        }
        Ok(Self { roots, ranking })
    }

    fn hit(&self, position: usize) -> bool {
        self.ranking.get(position).is_some_and(|n| self.roots.contains(n))
    }
}

fn check_cases(cases: &[AlarmCase]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::invalid("no alarm cases to evaluate"));
    }
    Ok(())
}

pub fn precision_at_k(cases: &[AlarmCase], k: usize) -> Result<f64> {
    check_cases(cases)?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let total: f64 = cases
        .iter()
        .map(|c| {
            let hits = (0..k).filter(|&i| c.hit(i)).count();
            hits as f64 / k.min(c.roots.len()) as f64
        })
        .sum();
    Ok(total / cases.len() as f64)
}

/// Mean of PR@1 through PR@5.
pub fn precision_at_avg(cases: &[AlarmCase]) -> Result<f64> {
    let mut sum = 0.0;
    for k in 1..=5 {
        sum += precision_at_k(cases, k)?;
    }
    Ok(sum / 5.0)
}

/// Score of a hit at 1-based `position`: `1 - max(0, position - roots) / ranking_len`.
pub fn hit_score(position: usize, roots: usize, ranking_len: usize) -> f64 {
    1.0 - (position as f64 - roots as f64).max(0.0) / ranking_len as f64
}

/// Each case sums [`hit_score`] over its hits and divides by `|R|`.
pub fn rank_score(cases: &[AlarmCase]) -> Result<f64> {
    check_cases(cases)?;
    let total: f64 = cases
        .iter()
        .map(|c| {
            let len = c.ranking.len();
            let s: f64 = (0..len)
                .filter(|&i| c.hit(i))
                .map(|i| hit_score(i + 1, c.roots.len(), len))
                .sum();
            s / len as f64
        })
        .sum();
    Ok(total / cases.len() as f64)
}

/// ROC-AUC of edge scores against the true directed graph over every
/// ordered off-diagonal pair, ties at midrank.
pub fn graph_auc(scores: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    let d = truth.rows();
    if !truth.is_square() || scores.rows() != d || scores.cols() != d {
        return Err(Error::dim(
            "graph AUC",
            format!("{d}x{d}"),
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    let mut items: Vec<(f64, bool)> = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                items.push((scores[(i, j)], truth[(i, j)] != 0.0));
            }
        }
    }
    let pos = items.iter().filter(|x| x.1).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both edges and non-edges in the truth"));
    }
    if items.iter().any(|x| x.0.is_nan()) {
        return Err(Error::NonFinite {
            term: "edge scores".into(),
        });
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j < items.len() && items[j].0 == items[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * items[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Structural Hamming distance between directed graphs: every unordered
/// pair whose edge state differs counts once, so a reversal costs 1.
pub fn graph_shd(predicted: &DenseMatrix, truth: &DenseMatrix) -> Result<usize> {
    let d = truth.rows();
    if !truth.is_square() || predicted.rows() != d || predicted.cols() != d {
        return Err(Error::dim(
            "graph SHD",
            format!("{d}x{d}"),
            format!("{}x{}", predicted.rows(), predicted.cols()),
        ));
    }
    let on = |m: &DenseMatrix, i, j| m[(i, j)] != 0.0;
    let mut count = 0;
    for i in 0..d {
        for j in i + 1..d {
            if (on(predicted, i, j), on(predicted, j, i)) != (on(truth, i, j), on(truth, j, i)) {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub num_cases: usize,
    /// PR@1 through PR@5.
    pub precision_at: Vec<f64>,
    pub precision_avg: f64,
    pub rank_score: f64,
    pub auc: Option<f64>,
    pub shd: Option<usize>,
}

impl MetricsReport {
    pub fn from_cases(label: &str, cases: &[AlarmCase]) -> Result<Self> {
        let precision_at = (1..=5).map(|k| precision_at_k(cases, k)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: label.to_string(),
            num_cases: cases.len(),
            precision_avg: precision_at.iter().sum::<f64>() / 5.0,
            precision_at,
            rank_score: rank_score(cases)?,
            auc: None,
            shd: None,
        })
    }

    pub const CSV_HEADER: &'static str = "label,cases,pr1,pr2,pr3,pr4,pr5,pr_avg,rank_score,auc,shd";

    pub fn csv_row(&self) -> String {
        let mut cells = vec![self.label.clone(), self.num_cases.to_string()];
        cells.extend(self.precision_at.iter().map(|v| format!("{v:?}")));
        cells.push(format!("{:?}", self.precision_avg));
        cells.push(format!("{:?}", self.rank_score));
        cells.push(self.auc.map(|v| format!("{v:?}")).unwrap_or_default());
        cells.push(self.shd.map(|v| v.to_string()).unwrap_or_default());
        cells.join(",")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text = format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row());
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(roots: &[usize], ranking: &[usize]) -> AlarmCase {
        AlarmCase::new(roots.to_vec(), ranking.to_vec()).unwrap()
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&[case(&[0], &[0, 1, 2])], 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&[case(&[0, 1], &[0, 2, 1])], 2).unwrap(), 0.5);
        assert_eq!(precision_at_k(&[case(&[5], &[0, 1, 2])], 3).unwrap(), 0.0);
        assert!(precision_at_k(&[], 1).is_err());
        assert_eq!(precision_at_avg(&[case(&[2], &[2, 0, 1])]).unwrap(), 1.0);
    }

    #[test]
    fn rank_score_literal_formula() {
        // Two roots in front of a length-4 ranking: each hit scores 1, case value 2/4.
        assert_eq!(rank_score(&[case(&[1, 3], &[3, 1, 0, 2])]).unwrap(), 0.5);
        assert_eq!(rank_score(&[case(&[9], &[0, 1])]).unwrap(), 0.0);
        // |V| = 1, |R| = 3: position 3 scores 1 - 2/3.
        let v = rank_score(&[case(&[2], &[0, 1, 2])]).unwrap();
        assert!((v - (1.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn graph_metric_examples() {
        let truth = DenseMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(graph_auc(&truth, &truth).unwrap(), 1.0);
        assert_eq!(graph_auc(&truth.map(|v| 1.0 - v), &truth).unwrap(), 0.0);
        assert_eq!(graph_shd(&truth, &truth).unwrap(), 0);
        assert_eq!(graph_shd(&truth.transpose(), &truth).unwrap(), 2);
        let mut one = truth.clone();
        one[(0, 1)] = 0.0;
        one[(1, 0)] = 1.0;
        assert_eq!(graph_shd(&one, &truth).unwrap(), 1);
    }
}
