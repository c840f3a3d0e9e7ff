//! Binary concrete (Gumbel-sigmoid) relaxation of Bernoulli draws.

use super::rng::RandomSource;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic noise `log u - log(1 - u)` for `u` in `(0, 1)`.
#[inline]
pub fn logistic_noise(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

/// Deterministic relaxed sample given the logistic noise; also returns
/// `d sample / d logit`.
#[inline]
pub fn relaxed_bernoulli_with_noise(logit: f64, temperature: f64, noise: f64) -> (f64, f64) {
    let y = sigmoid((logit + noise) / temperature);
    (y, y * (1.0 - y) / temperature)
}

/// Draws a relaxed Bernoulli sample in `(0, 1)` whose hard threshold at
/// one half is distributed as `Bern(sigmoid(logit))`.
pub fn relaxed_bernoulli_sample(logit: f64, temperature: f64, rng: &mut RandomSource) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "relaxation temperature must be positive, got {temperature}"
        )));
    }
    let noise = logistic_noise(rng.uniform_open());
    Ok(relaxed_bernoulli_with_noise(logit, temperature, noise).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of(logit: f64, temp: f64, n: usize, seed: u64) -> f64 {
        let mut rng = RandomSource::new(seed);
        (0..n)
            .map(|_| relaxed_bernoulli_sample(logit, temp, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn saturated_logit() {
        let mut rng = RandomSource::new(1);
        for temp in [0.1, 1.0, 5.0] {
            for _ in 0..100 {
                assert!(relaxed_bernoulli_sample(50.0, temp, &mut rng).unwrap() > 0.999);
            }
        }
    }

    #[test]
    fn monte_carlo_means() {
        assert!((mean_of(0.0, 0.3, 100_000, 2) - 0.5).abs() < 0.01);
        assert!((mean_of(2.0, 0.1, 100_000, 3) - sigmoid(2.0)).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut rng = RandomSource::new(1);
        assert!(relaxed_bernoulli_sample(0.0, 0.0, &mut rng).is_err());
        assert!(relaxed_bernoulli_sample(0.0, -1.0, &mut rng).is_err());
        assert!(relaxed_bernoulli_sample(0.0, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn derivative_matches_difference() {
        for &(l, t, z) in &[(0.3, 0.5, -0.2), (-1.0, 1.0, 0.7), (2.0, 0.2, -1.5)] {
            let (_, d) = relaxed_bernoulli_with_noise(l, t, z);
            let h = 1e-6;
            let fd =
                (relaxed_bernoulli_with_noise(l + h, t, z).0 - relaxed_bernoulli_with_noise(l - h, t, z).0) / (2.0 * h);
            assert!((fd - d).abs() < 1e-7);
        }
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
