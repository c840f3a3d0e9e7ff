#![allow(dead_code)]

use partial_rca::model::{AdmgPosterior, ModelState, ScmConfig, ScmParameters};
use partial_rca::numerics::{logistic_noise, DenseMatrix, RandomSource};
use partial_rca::score::{evaluate_objective, ConstraintSchedule, ObjectiveBatch, TermMask};

pub struct GradientCase {
    pub state: ModelState,
    pub x: DenseMatrix,
    pub weights: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub eps: DenseMatrix,
    pub noise: Vec<DenseMatrix>,
    pub temperature: f64,
    pub schedule: ConstraintSchedule,
}

impl GradientCase {
    /// Small random instance with every parameter group away from zero.
    pub fn random(seed: u64, d: usize, r: usize, weighted: bool) -> Self {
        let mut rng = RandomSource::new(seed);
        let config = ScmConfig {
            lags: 2,
            embedding_dim: 4,
            message_dim: 4,
            hidden_width: 8,
            embedding_init_std: 0.5,
        };
        let mut scm = ScmParameters::new(d, r, config, &mut rng).unwrap();
        for j in 0..d {
            scm.set_log_noise_scale(j, rng.uniform_range(-0.3, 0.3));
        }
        let n = d + r;
        let mut post = AdmgPosterior::new(d, r, 0.1).unwrap();
        for i in 0..n {
            for j in 0..n {
                if post.is_allowed(i, j) {
                    post.set_gamma(i, j, rng.uniform_range(-2.0, 2.0));
                }
                if i < j {
                    post.set_theta(i, j, rng.uniform_range(-2.0, 2.0));
                }
            }
        }
        let t_len = 12;
        let x = DenseMatrix::from_fn(t_len, d, |_, _| rng.normal());
        let weights = if weighted {
            (0..t_len).map(|_| rng.uniform_range(0.3, 2.0)).collect()
        } else {
            vec![1.0; t_len]
        };
        let eps = DenseMatrix::from_fn(t_len, r, |_, _| rng.normal());
        let noise = (0..2)
            .map(|_| DenseMatrix::from_fn(n, n, |_, _| logistic_noise(rng.uniform_open())))
            .collect();
        Self {
            state: ModelState { posterior: post, scm },
            x,
            weights,
            timesteps: vec![2, 5, 7, 8, 11],
            eps,
            noise,
            temperature: rng.uniform_range(0.3, 1.0),
            schedule: ConstraintSchedule {
                lambda: rng.uniform_range(0.5, 5.0),
                rho: rng.uniform_range(0.5, 3.0),
                alpha: rng.uniform_range(0.0, 2.0),
            },
        }
    }

    fn batch(&self, terms: TermMask) -> ObjectiveBatch<'_> {
        ObjectiveBatch {
            x: &self.x,
            weights: &self.weights,
            timesteps: &self.timesteps,
            confounder_noise: &self.eps,
            graph_noise: &self.noise,
            temperature: self.temperature,
            straight_through: false,
            schedule: self.schedule,
            terms,
            kl_weight: 1.0,
        }
    }

    pub fn term_value(&self, state: &ModelState, terms: TermMask) -> f64 {
        let b = evaluate_objective(state, &self.batch(terms)).unwrap().breakdown;
        let mut v = 0.0;
        if terms.data_fit {
            v += b.data_fit;
        }
        if terms.graph_penalty {
            v += b.graph_penalty;
        }
        if terms.confounder_kl {
            v += b.confounder_kl;
        }
        v
    }

    pub fn analytic(&self, terms: TermMask) -> Vec<f64> {
        evaluate_objective(&self.state, &self.batch(terms)).unwrap().gradient
    }

    /// Central differences, or `None` when some coordinate's estimate moves
    /// between `step` and `step / 10`. For a smooth function the two agree
    /// to O(step²); a kink of a piecewise-linear activation within one step
    /// breaks that.
    pub fn finite_difference(&self, terms: TermMask, step: f64) -> Option<Vec<f64>> {
        let base = self.state.params();
        let mut probe = self.state.clone();
        let mut out = vec![0.0; base.len()];
        let mut flat = base.clone();
        let mut central = |k: usize, h: f64| {
            flat[k] = base[k] + h;
            probe.set_params(&flat);
            let up = self.term_value(&probe, terms);
            flat[k] = base[k] - h;
            probe.set_params(&flat);
            let down = self.term_value(&probe, terms);
            flat[k] = base[k];
            (up - down) / (2.0 * h)
        };
        for k in 0..base.len() {
            let coarse = central(k, step);
            let fine = central(k, step / 10.0);
            if (coarse - fine).abs() > 1e-5 * coarse.abs().max(fine.abs()).max(1e-2) {
                return None;
            }
            out[k] = coarse;
        }
        Some(out)
    }

    /// Named `[start, end)` ranges of the flat layout.
    pub fn groups(&self) -> Vec<(&'static str, usize, usize)> {
        let post = &self.state.posterior;
        let n = post.num_nodes();
        let g_end = n * n;
        let t_end = post.num_params();
        let total = self.state.num_params();
        let gauss = self.state.scm.f_gauss_param_range();
        let z_len = self.state.scm.embeddings().rows() * self.state.scm.embeddings().cols();
        let d = post.num_observed();
        vec![
            ("gamma", 0, g_end),
            ("theta", g_end, t_end),
            ("g/f_obs/f_conf", t_end, t_end + gauss.start),
            ("f_gauss", t_end + gauss.start, t_end + gauss.end),
            ("z", t_end + gauss.end, t_end + gauss.end + z_len),
            ("log_noise", total - d, total),
        ]
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst group-wise relative error between analytic and numeric gradients,
/// or `None` for an instance that straddles a kink.
pub fn worst_group_error(case: &GradientCase, terms: TermMask) -> Option<(f64, &'static str)> {
    let a = case.analytic(terms);
    let f = case.finite_difference(terms, 1e-5)?;
    let mut worst = (0.0, "");
    for (name, s, e) in case.groups() {
        let err = relative_error(&a[s..e], &f[s..e]);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    Some(worst)
}

/// Checks `instances` smooth random cases, skipping kink-straddling draws.
/// Returns the worst error and how many draws were skipped.
pub fn check_term(terms: TermMask, weighted: bool, r: usize, instances: usize, seed0: u64) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut done = 0;
    let mut seed = seed0;
    while done < instances {
        let case = GradientCase::random(seed, 3, r, weighted);
        seed += 1;
        match worst_group_error(&case, terms) {
            Some((err, group)) => {
                assert!(err < 1e-4, "seed {}: {group} relative error {err:e}", seed - 1);
                worst = worst.max(err);
                done += 1;
            }
            None => {
                skipped += 1;
                assert!(skipped <= instances, "too many non-smooth draws");
            }
        }
    }
    (worst, skipped)
}

/// Expected visit frequencies of a `steps`-step walk from `frontend`,
/// propagating the exact state distribution one step at a time. Row mass
/// missing from `h` returns to `frontend`.
pub fn expected_visits(h: &DenseMatrix, frontend: usize, steps: u64) -> Vec<f64> {
    let d = h.rows();
    let mut dist = vec![0.0; d];
    dist[frontend] = 1.0;
    let mut total = vec![0.0; d];
    for _ in 0..steps {
        for (t, p) in total.iter_mut().zip(&dist) {
            *t += p;
        }
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut kept = 0.0;
            for j in 0..d {
                next[j] += dist[i] * h[(i, j)];
                kept += h[(i, j)];
            }
            next[frontend] += dist[i] * (1.0 - kept);
        }
        dist = next;
    }
    total.iter().map(|v| v / steps as f64).collect()
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Random alarm cases over `n` nodes with 1..=3 roots each.
pub fn random_cases(rng: &mut RandomSource, n: usize, count: usize) -> Vec<partial_rca::evalmetrics::AlarmCase> {
    (0..count)
        .map(|_| {
            let mut ranking: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranking);
            let mut pool: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut pool);
            let roots = pool[..1 + rng.index(3.min(n))].to_vec();
            partial_rca::evalmetrics::AlarmCase::new(roots, ranking).unwrap()
        })
        .collect()
}

/// Random score matrix on a coarse grid (so ties occur) and a 0/1 truth
/// holding at least one edge and one non-edge.
pub fn random_graph_pair(rng: &mut RandomSource, d: usize) -> (DenseMatrix, DenseMatrix) {
    loop {
        let scores = DenseMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { rng.index(5) as f64 / 4.0 });
        let truth = DenseMatrix::from_fn(d, d, |i, j| if i != j && rng.bernoulli(0.3) { 1.0 } else { 0.0 });
        let edges = truth.sum() as usize;
        if edges > 0 && edges < d * (d - 1) {
            return (scores, truth);
        }
    }
}

/// Brute-force ranking and graph metrics, written without sharing any code
/// path with the library.
pub mod brute {
    use partial_rca::evalmetrics::AlarmCase;
    use partial_rca::numerics::DenseMatrix;
    use std::collections::HashSet;

    pub fn precision_at_k(cases: &[AlarmCase], k: usize) -> f64 {
        let mut total = 0.0;
        for c in cases {
            let top: HashSet<usize> = c.ranking.iter().take(k).copied().collect();
            let roots: HashSet<usize> = c.roots.iter().copied().collect();
            let hits = top.intersection(&roots).count() as f64;
            total += hits / std::cmp::min(k, c.roots.len()) as f64;
        }
        total / cases.len() as f64
    }

    pub fn precision_avg(cases: &[AlarmCase]) -> f64 {
        (precision_at_k(cases, 1)
            + precision_at_k(cases, 2)
            + precision_at_k(cases, 3)
            + precision_at_k(cases, 4)
            + precision_at_k(cases, 5))
            / 5.0
    }

    pub fn rank_score(cases: &[AlarmCase]) -> f64 {
        let mut total = 0.0;
        for c in cases {
            let len = c.ranking.len() as f64;
            let v = c.roots.len() as f64;
            let mut case_sum = 0.0;
            for (pos0, node) in c.ranking.iter().enumerate() {
                if c.roots.iter().any(|r| r == node) {
                    let i = (pos0 + 1) as f64;
                    let over = if i > v { i - v } else { 0.0 };
                    case_sum += 1.0 - over / len;
                }
            }
            total += case_sum / len;
        }
        total / cases.len() as f64
    }

    /// Probability that a random true edge outscores a random non-edge.
    pub fn auc(scores: &DenseMatrix, truth: &DenseMatrix) -> f64 {
        let d = truth.rows();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    if truth[(i, j)] != 0.0 {
                        pos.push(scores[(i, j)]);
                    } else {
                        neg.push(scores[(i, j)]);
                    }
                }
            }
        }
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    pub fn shd(predicted: &DenseMatrix, truth: &DenseMatrix) -> usize {
        let edges = |m: &DenseMatrix| -> HashSet<(usize, usize)> {
            let mut s = HashSet::new();
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if m[(i, j)] != 0.0 {
                        s.insert((i, j));
                    }
                }
            }
            s
        };
        let (p, t) = (edges(predicted), edges(truth));
        let mut pairs: HashSet<(usize, usize)> = HashSet::new();
        for &(i, j) in p.symmetric_difference(&t) {
            pairs.insert((i.min(j), i.max(j)));
        }
        pairs.len()
    }
}
