use partial_rca::numerics::{matrix_exp, Activation, DenseMatrix, FeedForwardNet, RandomSource};
use proptest::prelude::*;

/// Scalar loss `sum(upstream * net(input))` used for finite differences.
fn loss(net: &FeedForwardNet, input: &DenseMatrix, upstream: &DenseMatrix) -> f64 {
    let out = net.forward_batch(input.clone()).unwrap().into_output();
    out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn network_gradients_match_finite_differences() {
    let step = 1e-5;
    let architectures: [(&[usize], Activation); 3] = [
        (&[3, 5, 2], Activation::default()),
        (&[4, 6, 6, 1], Activation::Tanh),
        (&[2, 7, 3], Activation::LeakyRelu { slope: 0.2 }),
    ];
    for (arch_idx, (sizes, act)) in architectures.iter().enumerate() {
        for seed in 0..20 {
            let mut rng = RandomSource::new(1000 * arch_idx as u64 + seed);
            let mut net = FeedForwardNet::new(sizes, *act, &mut rng).unwrap();
            let mut flat = Vec::new();
            net.write_params(&mut flat);
            for v in flat.iter_mut() {
                *v += 0.1 * rng.normal();
            }
            net.read_params(&flat);
            let batch = 3;
            let input = DenseMatrix::from_fn(batch, sizes[0], |_, _| rng.normal());
            let upstream = DenseMatrix::from_fn(batch, *sizes.last().unwrap(), |_, _| rng.normal());

            let tape = net.forward_batch(input.clone()).unwrap();
            let mut grads = net.zero_gradients();
            let d_input = net.backward(&tape, &upstream, &mut grads).unwrap();
            let mut analytic = Vec::new();
            grads.write_flat(&mut analytic);

            for k in 0..flat.len() {
                let mut probe = net.clone();
                let mut shifted = flat.clone();
                shifted[k] += step;
                probe.read_params(&shifted);
                let up = loss(&probe, &input, &upstream);
                shifted[k] -= 2.0 * step;
                probe.read_params(&shifted);
                let down = loss(&probe, &input, &upstream);
                let numeric = (up - down) / (2.0 * step);
                assert!(
                    rel_err(analytic[k], numeric) < 1e-4,
                    "arch {arch_idx} seed {seed} param {k}: {} vs {numeric}",
                    analytic[k]
                );
            }
            for i in 0..input.rows() {
                for j in 0..input.cols() {
                    let mut x = input.clone();
                    x[(i, j)] += step;
                    let up = loss(&net, &x, &upstream);
                    x[(i, j)] -= 2.0 * step;
                    let down = loss(&net, &x, &upstream);
                    let numeric = (up - down) / (2.0 * step);
                    assert!(
                        rel_err(d_input[(i, j)], numeric) < 1e-4,
                        "arch {arch_idx} input ({i},{j})"
                    );
                }
            }
        }
    }
}

#[test]
fn exponential_of_swap_matrix() {
    // Eigenvalues +1 and -1 with eigenvectors (1, 1) and (1, -1).
    let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let e = matrix_exp(&a).unwrap();
    let (p, m) = (std::f64::consts::E, 1.0 / std::f64::consts::E);
    let want = [[(p + m) / 2.0, (p - m) / 2.0], [(p - m) / 2.0, (p + m) / 2.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((e[(i, j)] - want[i][j]).abs() < 1e-14);
        }
    }
    assert!((e[(0, 0)] - 1.5431).abs() < 1e-4 && (e[(0, 1)] - 1.1752).abs() < 1e-4);
}

proptest! {
    #[test]
    fn nilpotent_exponential_has_unit_diagonal(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = RandomSource::new(seed);
        let a = DenseMatrix::from_fn(n, n, |i, j| if i > j { rng.uniform_range(-3.0, 3.0) } else { 0.0 });
        let e = matrix_exp(&a).unwrap();
        for i in 0..n {
            prop_assert!((e[(i, i)] - 1.0).abs() < 1e-12);
            for j in i + 1..n {
                prop_assert_eq!(e[(i, j)], 0.0);
            }
        }
        prop_assert!((e.trace() - n as f64).abs() < 1e-11);
    }

    #[test]
    fn exponential_of_zero_is_identity(n in 1usize..10) {
        prop_assert_eq!(matrix_exp(&DenseMatrix::zeros(n, n)).unwrap(), DenseMatrix::identity(n));
    }

    #[test]
    fn seeded_streams_repeat(seed in any::<u64>(), stream in 0u64..1000) {
        let mut a = RandomSource::new(seed).derive(stream);
        let mut b = RandomSource::new(seed).derive(stream);
        for _ in 0..50 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            prop_assert_eq!(a.index(17), b.index(17));
        }
    }
}
