use partial_rca::numerics::{DenseMatrix, RandomSource};
use partial_rca::panel::MetricPanel;
use partial_rca::score::ConstraintSchedule;
use partial_rca::synth::{generate_panel, SemSpec};
use partial_rca::trainer::{fit, lagrangian_update, TrainConfig};

fn chain_panel(t: usize, seed: u64) -> MetricPanel {
    let mut dag = DenseMatrix::zeros(3, 3);
    dag[(0, 1)] = 1.0;
    dag[(1, 2)] = -1.0;
    let sim = generate_panel(&dag, t, &SemSpec::default(), &mut RandomSource::new(seed)).unwrap();
    MetricPanel::unnamed(sim.values).unwrap()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        latents: 0,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn chain_is_recovered() {
    let mut good = 0;
    for seed in 0..10 {
        let rep = fit(&chain_panel(500, 300 + seed), &quick(seed)).unwrap();
        let p = rep.soft_graph();
        let p = p.directed();
        let ok = rep.final_h < 1e-8 && p[(0, 1)] > 0.8 && p[(1, 2)] > 0.8 && p[(1, 0)] < 0.2 && p[(2, 1)] < 0.2;
        if ok {
            good += 1;
        }
    }
    assert!(good >= 8, "{good}/10 seeds recovered the chain");
}

#[test]
fn fit_is_deterministic_and_tracks_the_schedule() {
    let panel = chain_panel(200, 7);
    let cfg = TrainConfig {
        outer_rounds: 4,
        steps_per_round: 60,
        graph_warmup_steps: 20,
        scheduling_warmup: 1,
        latents: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = fit(&panel, &cfg).unwrap();
    let b = fit(&panel, &cfg).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history, b.history);

    let rounds: Vec<_> = a.log.iter().filter(|r| r.kind == "round").collect();
    assert_eq!(rounds.len(), a.rounds_run);
    for pair in rounds.windows(2) {
        assert!(pair[1].rho >= pair[0].rho);
        assert!(pair[1].alpha >= pair[0].alpha);
    }
    assert_eq!(a.converged, a.final_h < cfg.h_tolerance);
    assert_eq!(a.weights.values().len(), 200);
    let sum: f64 = a.weights.values().iter().sum();
    assert!((sum - 200.0).abs() < 1e-9);
}

#[test]
fn scheduling_held_back_keeps_unit_weights() {
    let panel = chain_panel(150, 8);
    for (warmup, disable) in [(3, false), (1, true)] {
        let cfg = TrainConfig {
            outer_rounds: 3,
            steps_per_round: 30,
            graph_warmup_steps: 10,
            scheduling_warmup: warmup,
            disable_scheduling: disable,
            latents: 0,
            ..TrainConfig::default()
        };
        let rep = fit(&panel, &cfg).unwrap();
        assert!(rep.weights.values().iter().all(|&w| w == 1.0));
    }
}

#[test]
fn lagrangian_update_rules() {
    let s = ConstraintSchedule {
        lambda: 1.0,
        rho: 2.0,
        alpha: 0.5,
    };
    // Not enough progress: rho grows.
    let next = lagrangian_update(s, 0.4, 1.0, 10.0, 0.25);
    assert_eq!((next.rho, next.alpha), (20.0, 0.5 + 2.0 * 0.4));
    // Enough progress: rho stays.
    let next = lagrangian_update(s, 0.1, 1.0, 10.0, 0.25);
    assert_eq!((next.rho, next.alpha), (2.0, 0.5 + 0.2));
    assert_eq!(next.lambda, 1.0);
}

#[test]
fn bad_inputs_are_rejected() {
    let panel = chain_panel(12, 1);
    assert!(fit(&panel, &quick(0)).is_err());
    let single = MetricPanel::unnamed(DenseMatrix::zeros(100, 1)).unwrap();
    assert!(fit(&single, &quick(0)).is_err());
    let cfg = TrainConfig {
        tau: 1.5,
        ..TrainConfig::default()
    };
    assert!(fit(&chain_panel(100, 1), &cfg).is_err());
}
