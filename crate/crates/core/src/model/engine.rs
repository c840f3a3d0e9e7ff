//! Batched forward and reverse pass through the structural causal networks.
//!
//! For a batch of target timesteps `t_1..t_B` every node runs `g` once on its
//! embedding and lag window. Rows are laid out node-major (`i * B + b`) so the
//! `nB x k` message block reshapes for free into `n x (B k)` and aggregation
//! along a sampled graph is a single matrix product per sample.

use super::scm::ScmParameters;
use crate::error::{Error, Result};
use crate::numerics::{gemm, DenseMatrix, ForwardTape};

pub(crate) struct ScnPass {
    ts: Vec<usize>,
    g_in: usize,
    g_tape: ForwardTape,
    /// `n x (B k)` view of the messages.
    messages: DenseMatrix,
    samples: Vec<SamplePass>,
}

struct SamplePass {
    obs_tape: ForwardTape,
    conf_tape: Option<ForwardTape>,
    /// `d x B`.
    means: DenseMatrix,
}

/// Gradients produced by [`ScnPass::backward`] besides the parameter ones.
pub(crate) struct ScnInputGradients {
    /// One `n x n` matrix per graph sample.
    pub graphs: Vec<DenseMatrix>,
    /// `T x r` gradient with respect to the confounder draws.
    pub confounders: DenseMatrix,
}

impl ScnPass {
    pub(crate) fn forward(
        params: &ScmParameters,
        x: &DenseMatrix,
        c: &DenseMatrix,
        ts: &[usize],
        graphs: &[DenseMatrix],
    ) -> Result<Self> {
        let d = params.num_observed();
        let r = params.num_latent();
        let n = d + r;
        let p = params.lags();
        let e = params.z.cols();
        let k = params.config().message_dim;
        let b = ts.len();
        if x.cols() != d {
            return Err(Error::dim("panel columns", d, x.cols()));
        }
        if c.cols() != r || (r > 0 && c.rows() != x.rows()) {
            return Err(Error::dim(
                "confounder draws",
                format!("{}x{r}", x.rows()),
                format!("{}x{}", c.rows(), c.cols()),
            ));
        }
        for &t in ts {
            if t < p || t >= x.rows() {
                return Err(Error::invalid(format!(
                    "timestep {t} needs {p} steps of history inside a panel of {} rows",
                    x.rows()
                )));
            }
        }
        for m in graphs {
            if m.rows() != n || m.cols() != n {
                return Err(Error::dim(
                    "graph sample",
                    format!("{n}x{n}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }

        let g_in = e + p;
        let mut input = vec![0.0; n * b * g_in];
        for i in 0..n {
            let zi = params.z.row(i);
            for (bi, &t) in ts.iter().enumerate() {
                let row = &mut input[(i * b + bi) * g_in..(i * b + bi + 1) * g_in];
                row[..e].copy_from_slice(zi);
                for l in 1..=p {
                    row[e + l - 1] = if i < d { x[(t - l, i)] } else { c[(t - l, i - d)] };
                }
            }
        }
        let g_tape = params.g.forward_batch(DenseMatrix::from_vec(n * b, g_in, input)?)?;
        let messages = DenseMatrix::from_vec(n, b * k, g_tape.output().as_slice().to_vec())?;
        let g_obs = messages.block(0, 0, d, b * k);
        let g_conf = messages.block(d, 0, r, b * k);

        let mut samples = Vec::with_capacity(graphs.len());
        for m in graphs {
            let m_obs = m.block(0, 0, d, d);
            let obs_tape = aggregate_and_apply(params, &params.f_obs, &m_obs, &g_obs, b)?;
            let mut means = DenseMatrix::from_vec(d, b, obs_tape.output().as_slice().to_vec())?;
            let conf_tape = if r > 0 {
                let m_conf = m.block(d, 0, r, d);
                let tape = aggregate_and_apply(params, &params.f_conf, &m_conf, &g_conf, b)?;
                for (acc, v) in means.as_mut_slice().iter_mut().zip(tape.output().as_slice()) {
                    *acc += v;
                }
                Some(tape)
            } else {
                None
            };
            samples.push(SamplePass {
                obs_tape,
                conf_tape,
                means,
            });
        }
        Ok(Self {
            ts: ts.to_vec(),
            g_in,
            g_tape,
            messages,
            samples,
        })
    }

    pub(crate) fn num_samples(&self) -> usize {
        self.samples.len()
    }

    /// `d x B` predictive means for graph sample `s`.
    pub(crate) fn means(&self, s: usize) -> &DenseMatrix {
        &self.samples[s].means
    }

    /// Reverse pass. `d_means[s]` is `d x B`; parameter gradients accumulate
    /// into `grads` (nets and embeddings only).
    pub(crate) fn backward(
        &self,
        params: &ScmParameters,
        graphs: &[DenseMatrix],
        d_means: &[DenseMatrix],
        num_timesteps: usize,
        grads: &mut super::scm::ScmGradients,
    ) -> Result<ScnInputGradients> {
        let d = params.num_observed();
        let r = params.num_latent();
        let n = d + r;
        let p = params.lags();
        let e = params.z.cols();
        let k = params.config().message_dim;
        let b = self.ts.len();
        if d_means.len() != self.samples.len() || graphs.len() != self.samples.len() {
            return Err(Error::dim("graph samples", self.samples.len(), d_means.len()));
        }

        let g_obs = self.messages.block(0, 0, d, b * k);
        let g_conf = self.messages.block(d, 0, r, b * k);
        let mut d_messages = DenseMatrix::zeros(n, b * k);
        let mut d_graphs = Vec::with_capacity(graphs.len());
        for ((sample, m), dm) in self.samples.iter().zip(graphs).zip(d_means) {
            let mut d_graph = DenseMatrix::zeros(n, n);
            let m_obs = m.block(0, 0, d, d);
            let (dm_obs, dg_obs) = aggregate_backward(
                params,
                &params.f_obs,
                &sample.obs_tape,
                &m_obs,
                &g_obs,
                dm,
                b,
                &mut grads.f_obs,
                &mut grads.z,
            )?;
            for i in 0..d {
                for j in 0..d {
                    d_graph[(i, j)] = dm_obs[(i, j)];
                }
                let dst = &mut d_messages.row_mut(i);
                for (a, v) in dst.iter_mut().zip(dg_obs.row(i)) {
                    *a += v;
                }
            }
            if let Some(conf_tape) = &sample.conf_tape {
                let m_conf = m.block(d, 0, r, d);
                let (dm_conf, dg_conf) = aggregate_backward(
                    params,
                    &params.f_conf,
                    conf_tape,
                    &m_conf,
                    &g_conf,
                    dm,
                    b,
                    &mut grads.f_conf,
                    &mut grads.z,
                )?;
                for i in 0..r {
                    for j in 0..d {
                        d_graph[(d + i, j)] = dm_conf[(i, j)];
                    }
                    let dst = d_messages.row_mut(d + i);
                    for (a, v) in dst.iter_mut().zip(dg_conf.row(i)) {
                        *a += v;
                    }
                }
            }
            d_graphs.push(d_graph);
        }

        let upstream = DenseMatrix::from_vec(n * b, k, d_messages.into_vec())?;
        let d_input = params.g.backward(&self.g_tape, &upstream, &mut grads.g)?;
        let mut d_c = DenseMatrix::zeros(num_timesteps, r);
        for i in 0..n {
            for (bi, &t) in self.ts.iter().enumerate() {
                let row = d_input.row(i * b + bi);
                for (a, v) in grads.z.row_mut(i).iter_mut().zip(&row[..e]) {
                    *a += v;
                }
                if i >= d {
                    for l in 1..=p {
                        d_c[(t - l, i - d)] += row[e + l - 1];
                    }
                }
            }
        }
        debug_assert_eq!(self.g_in, e + p);
        Ok(ScnInputGradients {
            graphs: d_graphs,
            confounders: d_c,
        })
    }
}

/// `A' = M^T G'` then `f([z_j, A_j])` for every (target node, batch) row.
fn aggregate_and_apply(
    params: &ScmParameters,
    net: &crate::numerics::FeedForwardNet,
    m: &DenseMatrix,
    g: &DenseMatrix,
    b: usize,
) -> Result<ForwardTape> {
    let d = m.cols();
    let bk = g.cols();
    let k = bk / b.max(1);
    let e = params.z.cols();
    let mut agg = DenseMatrix::zeros(d, bk);
    gemm(1.0, m, true, g, false, 0.0, &mut agg);
    let mut input = vec![0.0; d * b * (e + k)];
    for j in 0..d {
        let zj = params.z.row(j);
        let aj = agg.row(j);
        for bi in 0..b {
            let row = &mut input[(j * b + bi) * (e + k)..(j * b + bi + 1) * (e + k)];
            row[..e].copy_from_slice(zj);
            row[e..].copy_from_slice(&aj[bi * k..(bi + 1) * k]);
        }
    }
    net.forward_batch(DenseMatrix::from_vec(d * b, e + k, input)?)
}

/// Returns `(dM, dG')` and accumulates net and target-embedding gradients.
#[allow(clippy::too_many_arguments)]
fn aggregate_backward(
    params: &ScmParameters,
    net: &crate::numerics::FeedForwardNet,
    tape: &ForwardTape,
    m: &DenseMatrix,
    g: &DenseMatrix,
    d_means: &DenseMatrix,
    b: usize,
    net_grads: &mut crate::numerics::NetGradients,
    dz: &mut DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let d = m.cols();
    let bk = g.cols();
    let k = bk / b.max(1);
    let e = params.z.cols();
    let upstream = DenseMatrix::from_vec(d * b, 1, d_means.as_slice().to_vec())?;
    let d_input = net.backward(tape, &upstream, net_grads)?;
    let mut d_agg = DenseMatrix::zeros(d, bk);
    for j in 0..d {
        for bi in 0..b {
            let row = d_input.row(j * b + bi);
            for (a, v) in dz.row_mut(j).iter_mut().zip(&row[..e]) {
                *a += v;
            }
            d_agg.row_mut(j)[bi * k..(bi + 1) * k].copy_from_slice(&row[e..]);
        }
    }
    let mut d_m = DenseMatrix::zeros(m.rows(), d);
    gemm(1.0, g, false, &d_agg, true, 0.0, &mut d_m);
    let mut d_g = DenseMatrix::zeros(m.rows(), bk);
    gemm(1.0, m, false, &d_agg, false, 0.0, &mut d_g);
    Ok((d_m, d_g))
}
