mod common;

use common::{expected_visits, total_variation};
use partial_rca::localize::{
    anomaly_rank, random_walk, root_cause_scores, transition_matrix, Alarm, LocalizeConfig, Localizer,
};
use partial_rca::model::{AdmgPosterior, ModelState, ScmConfig, ScmParameters};
use partial_rca::numerics::{DenseMatrix, RandomSource};
use proptest::prelude::*;

#[test]
fn two_node_walk_matches_expected_visits() {
    // b -> frontend in D, so the reversed walk moves frontend -> b.
    let mut d = DenseMatrix::zeros(2, 2);
    d[(1, 0)] = 1.0;
    let h = transition_matrix(&d, 0.5).unwrap();
    let steps = 100_000;
    let zeta = random_walk(&h, 0, steps, &mut RandomSource::new(42)).unwrap();
    let empirical: Vec<f64> = zeta.iter().map(|&z| z as f64 / steps as f64).collect();
    let oracle = expected_visits(&h, 0, steps);
    // Stationary split is (2/3, 1/3).
    assert!((oracle[0] - 2.0 / 3.0).abs() < 1e-4);
    assert!(total_variation(&empirical, &oracle) < 0.01);
}

#[test]
fn walk_is_deterministic_under_seed() {
    let mut rng = RandomSource::new(5);
    let d = DenseMatrix::from_fn(6, 6, |i, j| if i != j && rng.bernoulli(0.4) { 1.0 } else { 0.0 });
    let h = transition_matrix(&d, 0.15).unwrap();
    let a = random_walk(&h, 2, 10_000, &mut RandomSource::new(9)).unwrap();
    let b = random_walk(&h, 2, 10_000, &mut RandomSource::new(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dangling_rows_restart() {
    let d = DenseMatrix::zeros(3, 3);
    let h = transition_matrix(&d, 0.3).unwrap();
    assert_eq!(h.sum(), 0.0);
    assert_eq!(
        random_walk(&h, 1, 1000, &mut RandomSource::new(1)).unwrap(),
        vec![0, 1000, 0]
    );
}

/// Sort-based rank: position of `t` among the other timesteps sorted by
/// descending likelihood, with tied neighbours split evenly.
fn sorted_rank(row: &[f64], t: usize) -> f64 {
    let mut others: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(u, _)| u != t)
        .map(|(_, &v)| v)
        .collect();
    others.sort_by(|a, b| b.total_cmp(a));
    let above = others.iter().take_while(|&&v| v > row[t]).count();
    let tied = others.iter().filter(|&&v| v == row[t]).count();
    (above as f64 + 0.5 * tied as f64) / others.len() as f64
}

#[test]
fn anomaly_rank_matches_sorting() {
    let mut rng = RandomSource::new(3);
    // Values on a coarse grid so ties occur.
    let ll = DenseMatrix::from_fn(4, 30, |_, _| (rng.uniform_range(-5.0, 0.0) * 2.0).round() / 2.0);
    for t in [0, 7, 15, 29] {
        let eta = anomaly_rank(&ll, t).unwrap();
        for j in 0..4 {
            assert_eq!(eta[j], sorted_rank(ll.row(j), t));
        }
    }
    let strict = DenseMatrix::from_rows(&[vec![3.0, -9.0, 1.0], vec![0.0, 8.0, 1.0]]).unwrap();
    assert_eq!(anomaly_rank(&strict, 1).unwrap(), vec![1.0, 0.0]);
}

#[test]
fn psi_endpoints_rank_by_one_component() {
    let zeta = [5.0, 30.0, 10.0, 1.0];
    let eta = [0.9, 0.1, 0.5, 0.7];
    assert_eq!(root_cause_scores(&zeta, &eta, 1.0).unwrap().1, vec![1, 2, 0, 3]);
    assert_eq!(root_cause_scores(&zeta, &eta, 0.0).unwrap().1, vec![0, 3, 2, 1]);
}

fn random_state(d: usize, r: usize, seed: u64) -> ModelState {
    let mut rng = RandomSource::new(seed);
    let cfg = ScmConfig {
        lags: 1,
        embedding_dim: 3,
        message_dim: 3,
        hidden_width: 4,
        embedding_init_std: 0.5,
    };
    let scm = ScmParameters::new(d, r, cfg, &mut rng).unwrap();
    let mut posterior = AdmgPosterior::new(d, r, 0.1).unwrap();
    for i in 0..d + r {
        for j in 0..d {
            if posterior.is_allowed(i, j) {
                posterior.set_gamma(i, j, rng.uniform_range(-4.0, 4.0));
            }
            if i < j {
                posterior.set_theta(i, j, rng.uniform_range(-4.0, 4.0));
            }
        }
    }
    ModelState { posterior, scm }
}

#[test]
fn latent_edges_never_reach_the_walk() {
    let (d, r) = (5, 2);
    let names: Vec<String> = (0..d).map(|i| format!("m{i}")).collect();
    let mut rng = RandomSource::new(8);
    let x = DenseMatrix::from_fn(40, d, |_, _| rng.normal());
    for seed in 0..10 {
        let a = random_state(d, r, seed);
        let mut b = a.clone();
        for k in d..d + r {
            for j in 0..d {
                b.posterior.set_gamma(k, j, rng.uniform_range(-6.0, 6.0));
            }
        }
        let cfg = LocalizeConfig {
            walk_steps: 2000,
            ..LocalizeConfig::default()
        };
        let la = Localizer::new(&a, &x, names.clone(), cfg.clone()).unwrap();
        let lb = Localizer::new(&b, &x, names.clone(), cfg).unwrap();
        assert_eq!(la.transition(), lb.transition());
        let alarm = Alarm {
            frontend_node: 1,
            t: 20,
        };
        let ra = la.localize(alarm.clone(), &mut RandomSource::new(seed)).unwrap();
        let rb = lb.localize(alarm, &mut RandomSource::new(seed)).unwrap();
        assert_eq!(ra.zeta, rb.zeta);
    }
}

#[test]
fn localize_rejects_bad_alarms() {
    let state = random_state(3, 1, 1);
    let x = DenseMatrix::from_fn(10, 3, |t, j| (t + j) as f64 * 0.1);
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let loc = Localizer::new(&state, &x, names, LocalizeConfig::default()).unwrap();
    let mut rng = RandomSource::new(0);
    assert!(loc.localize(Alarm { frontend_node: 3, t: 5 }, &mut rng).is_err());
    assert!(loc
        .localize(
            Alarm {
                frontend_node: 0,
                t: 10
            },
            &mut rng
        )
        .is_err());
    assert!(loc.localize(Alarm { frontend_node: 0, t: 0 }, &mut rng).is_err());
    let rep = loc.localize(Alarm { frontend_node: 0, t: 4 }, &mut rng).unwrap();
    let mut sorted = rep.ranking.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, vec![0, 1, 2]);
    assert_eq!(rep.top_k().len(), 3);
}

fn graph_strategy() -> impl Strategy<Value = (usize, u64, f64)> {
    (1usize..9, any::<u64>(), 0.05f64..0.95)
}

proptest! {
    #[test]
    fn walk_counts_sum_and_restart_floor((d, seed, phi) in graph_strategy()) {
        let mut rng = RandomSource::new(seed);
        let g = DenseMatrix::from_fn(d, d, |i, j| if i != j && rng.bernoulli(0.5) { rng.uniform() } else { 0.0 });
        let h = transition_matrix(&g, phi).unwrap();
        let steps = 20_000u64;
        let frontend = rng.index(d);
        let zeta = random_walk(&h, frontend, steps, &mut rng).unwrap();
        prop_assert_eq!(zeta.iter().sum::<u64>(), steps);
        let n = steps as f64;
        let floor = phi * n - 3.0 * (n * phi * (1.0 - phi)).sqrt();
        prop_assert!(zeta[frontend] as f64 >= floor, "{} < {floor}", zeta[frontend]);
    }

    #[test]
    fn transition_rows_carry_one_minus_phi((d, seed, phi) in graph_strategy()) {
        let mut rng = RandomSource::new(seed);
        let g = DenseMatrix::from_fn(d, d, |i, j| if i != j && rng.bernoulli(0.5) { rng.uniform() } else { 0.0 });
        let h = transition_matrix(&g, phi).unwrap();
        for i in 0..d {
            let parents: f64 = (0..d).map(|k| g[(k, i)]).sum();
            let row: f64 = h.row(i).iter().sum();
            if parents > 0.0 {
                prop_assert!((row - (1.0 - phi)).abs() < 1e-12);
            } else {
                prop_assert_eq!(row, 0.0);
            }
        }
    }

    #[test]
    fn anomaly_rank_ignores_order_of_other_timesteps(seed in any::<u64>(), len in 3usize..40) {
        let mut rng = RandomSource::new(seed);
        let ll = DenseMatrix::from_fn(3, len, |_, _| rng.normal());
        let t = rng.index(len);
        let mut perm: Vec<usize> = (0..len).filter(|&u| u != t).collect();
        rng.shuffle(&mut perm);
        perm.insert(t, t);
        let shuffled = DenseMatrix::from_fn(3, len, |j, u| ll[(j, perm[u])]);
        prop_assert_eq!(anomaly_rank(&ll, t).unwrap(), anomaly_rank(&shuffled, t).unwrap());
    }

    #[test]
    fn raising_a_component_never_lowers_rank(
        zeta in prop::collection::vec(0.0f64..100.0, 2..10),
        eta_seed in any::<u64>(),
        psi in 0.0f64..=1.0,
        bump in 0.0f64..50.0,
        raise_eta in any::<bool>(),
    ) {
        let mut rng = RandomSource::new(eta_seed);
        let eta: Vec<f64> = zeta.iter().map(|_| rng.uniform()).collect();
        let i = rng.index(zeta.len());
        let (_, before) = root_cause_scores(&zeta, &eta, psi).unwrap();
        let (mut z2, mut e2) = (zeta.clone(), eta.clone());
        if raise_eta {
            e2[i] = (e2[i] + bump / 50.0).min(1.0);
        } else {
            z2[i] += bump;
        }
        let (_, after) = root_cause_scores(&z2, &e2, psi).unwrap();
        let pos = |r: &[usize]| r.iter().position(|&n| n == i).unwrap();
        prop_assert!(pos(&after) <= pos(&before));
    }
}
