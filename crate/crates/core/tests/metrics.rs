mod common;

use common::{brute, random_cases, random_graph_pair};
use partial_rca::evalmetrics::{
    graph_auc, graph_shd, hit_score, precision_at_avg, precision_at_k, rank_score, AlarmCase,
};
use partial_rca::numerics::{DenseMatrix, RandomSource};
use proptest::prelude::*;

#[test]
fn ranking_metrics_match_brute_force() {
    for seed in 0..200 {
        let mut rng = RandomSource::new(seed);
        let n = 3 + rng.index(10);
        let count = 1 + rng.index(6);
        let cases = random_cases(&mut rng, n, count);
        for k in 1..=n + 2 {
            assert!((precision_at_k(&cases, k).unwrap() - brute::precision_at_k(&cases, k)).abs() < 1e-12);
        }
        assert!((precision_at_avg(&cases).unwrap() - brute::precision_avg(&cases)).abs() < 1e-12);
        assert!((rank_score(&cases).unwrap() - brute::rank_score(&cases)).abs() < 1e-12);
    }
}

#[test]
fn graph_metrics_match_brute_force() {
    for seed in 0..200 {
        let mut rng = RandomSource::new(50_000 + seed);
        let d = 2 + rng.index(7);
        let (scores, truth) = random_graph_pair(&mut rng, d);
        assert!((graph_auc(&scores, &truth).unwrap() - brute::auc(&scores, &truth)).abs() < 1e-12);
        let predicted = scores.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        assert_eq!(graph_shd(&predicted, &truth).unwrap(), brute::shd(&predicted, &truth));
    }
}

#[test]
fn hand_examples() {
    // One root found first, then second.
    let first = AlarmCase::new(vec![2], vec![2, 0, 1]).unwrap();
    let second = AlarmCase::new(vec![2], vec![0, 2, 1]).unwrap();
    assert_eq!(precision_at_k(&[first.clone()], 1).unwrap(), 1.0);
    assert_eq!(precision_at_k(&[second.clone()], 1).unwrap(), 0.0);
    assert_eq!(precision_at_k(&[first.clone(), second.clone()], 2).unwrap(), 1.0);
    // Two roots, one in the top two.
    let split = AlarmCase::new(vec![0, 3], vec![0, 1, 2, 3]).unwrap();
    assert_eq!(precision_at_k(&[split.clone()], 1).unwrap(), 1.0);
    assert_eq!(precision_at_k(&[split.clone()], 2).unwrap(), 0.5);
    // Hits at positions 1 and 4 of 4 with |V| = 2: (1 + (1 - 2/4)) / 4.
    assert!((rank_score(&[split]).unwrap() - 1.5 / 4.0).abs() < 1e-15);

    let mut truth = DenseMatrix::zeros(3, 3);
    truth[(0, 1)] = 1.0;
    truth[(1, 2)] = 1.0;
    let mut reversed = DenseMatrix::zeros(3, 3);
    reversed[(1, 0)] = 1.0;
    reversed[(1, 2)] = 1.0;
    reversed[(0, 2)] = 1.0;
    assert_eq!(graph_shd(&reversed, &truth).unwrap(), 2);
    assert_eq!(graph_auc(&truth, &truth).unwrap(), 1.0);
    assert_eq!(graph_auc(&DenseMatrix::zeros(3, 3), &truth).unwrap(), 0.5);
}

#[test]
fn hit_score_boundaries() {
    // Any hit within the first |V| positions scores 1.
    for pos in 1..=3 {
        assert_eq!(hit_score(pos, 3, 10), 1.0);
    }
    assert!((hit_score(4, 3, 10) - 0.9).abs() < 1e-15);
    // The formula reaches 0 only at position |R| + |V|, one past the end.
    assert_eq!(hit_score(13, 3, 10), 0.0);
    assert!(hit_score(10, 3, 10) > 0.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(AlarmCase::new(vec![], vec![0]).is_err());
    assert!(AlarmCase::new(vec![0], vec![]).is_err());
    assert!(AlarmCase::new(vec![0], vec![0, 1, 0]).is_err());
    assert!(precision_at_k(&[], 1).is_err());
    let c = AlarmCase::new(vec![0], vec![0]).unwrap();
    assert!(precision_at_k(&[c], 0).is_err());
    assert!(graph_auc(&DenseMatrix::zeros(2, 2), &DenseMatrix::zeros(2, 2)).is_err());
    assert!(graph_shd(&DenseMatrix::zeros(2, 2), &DenseMatrix::zeros(3, 3)).is_err());
}

fn relabel(cases: &[AlarmCase], perm: &[usize]) -> Vec<AlarmCase> {
    cases
        .iter()
        .map(|c| {
            AlarmCase::new(
                c.roots.iter().map(|&r| perm[r]).collect(),
                c.ranking.iter().map(|&r| perm[r]).collect(),
            )
            .unwrap()
        })
        .collect()
}

proptest! {
    #[test]
    fn metrics_ignore_node_labels(seed in any::<u64>(), n in 2usize..12, count in 1usize..6) {
        let mut rng = RandomSource::new(seed);
        let cases = random_cases(&mut rng, n, count);
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let moved = relabel(&cases, &perm);
        prop_assert_eq!(precision_at_avg(&cases).unwrap(), precision_at_avg(&moved).unwrap());
        prop_assert_eq!(rank_score(&cases).unwrap(), rank_score(&moved).unwrap());

        let (scores, truth) = random_graph_pair(&mut rng, n.max(2));
        let d = truth.rows();
        let mut p: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut p);
        let permute = |m: &DenseMatrix| DenseMatrix::from_fn(d, d, |i, j| m[(p[i], p[j])]);
        prop_assert_eq!(graph_auc(&scores, &truth).unwrap(), graph_auc(&permute(&scores), &permute(&truth)).unwrap());
        let pred = scores.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        prop_assert_eq!(graph_shd(&pred, &truth).unwrap(), graph_shd(&permute(&pred), &permute(&truth)).unwrap());
    }

    #[test]
    fn precision_grows_once_k_covers_the_roots(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = RandomSource::new(seed);
        let cases = random_cases(&mut rng, n, 1);
        let roots = cases[0].roots.len();
        for k in roots..n + 2 {
            prop_assert!(precision_at_k(&cases, k + 1).unwrap() >= precision_at_k(&cases, k).unwrap());
        }
        let best = (1..=5).map(|k| precision_at_k(&cases, k).unwrap()).fold(0.0, f64::max);
        prop_assert!(precision_at_avg(&cases).unwrap() <= best + 1e-15);
        let all = precision_at_k(&cases, n).unwrap();
        prop_assert_eq!(all, 1.0);
    }
}
