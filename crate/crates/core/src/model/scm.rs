use serde::{Deserialize, Serialize};

use super::engine::ScnPass;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Activation, DenseMatrix, FeedForwardNet, NetGradients, RandomSource};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Architecture of the structural causal networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmConfig {
    /// History window length `p`.
    pub lags: usize,
    pub embedding_dim: usize,
    /// Width of the messages `g` sends along edges.
    pub message_dim: usize,
    pub hidden_width: usize,
    /// Standard deviation of the initial node embeddings.
    pub embedding_init_std: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            lags: 3,
            embedding_dim: 8,
            message_dim: 8,
            hidden_width: 16,
            embedding_init_std: 0.1,
        }
    }
}

/// Per-timestep Gaussian posterior over the latent confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderPosterior {
    /// `T x r`.
    pub mu: DenseMatrix,
    /// `T x r`, strictly positive.
    pub sigma: DenseMatrix,
}

impl ConfounderPosterior {
    pub fn new(mu: DenseMatrix, sigma: DenseMatrix) -> Result<Self> {
        if mu.rows() != sigma.rows() || mu.cols() != sigma.cols() {
            return Err(Error::dim(
                "ConfounderPosterior",
                format!("{}x{}", mu.rows(), mu.cols()),
                format!("{}x{}", sigma.rows(), sigma.cols()),
            ));
        }
        if let Some(s) = sigma.as_slice().iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!("confounder scale must be positive, got {s}")));
        }
        Ok(Self { mu, sigma })
    }

    /// Reparameterized draw `mu + sigma * eps`.
    pub fn sample(&self, eps: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(self.mu.rows(), self.mu.cols(), |t, k| {
            self.mu[(t, k)] + self.sigma[(t, k)] * eps[(t, k)]
        })
    }
}

/// Parameters of the magnified structural causal model: the shared networks
/// `f_obs`, `f_conf`, `g`, `f_gauss`, one embedding per node and a learned
/// log noise scale per observed node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmParameters {
    d: usize,
    r: usize,
    config: ScmConfig,
    pub(crate) g: FeedForwardNet,
    pub(crate) f_obs: FeedForwardNet,
    pub(crate) f_conf: FeedForwardNet,
    pub(crate) f_gauss: FeedForwardNet,
    /// `(d + r) x embedding_dim`.
    pub(crate) z: DenseMatrix,
    pub(crate) log_noise_scale: Vec<f64>,
}

/// Gradient buffers mirroring [`ScmParameters`].
#[derive(Debug, Clone)]
pub struct ScmGradients {
    pub g: NetGradients,
    pub f_obs: NetGradients,
    pub f_conf: NetGradients,
    pub f_gauss: NetGradients,
    pub z: DenseMatrix,
    pub log_noise_scale: Vec<f64>,
}

impl ScmParameters {
    pub fn new(d: usize, r: usize, config: ScmConfig, rng: &mut RandomSource) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("at least one observed metric is required"));
        }
        if config.lags == 0 || config.embedding_dim == 0 || config.message_dim == 0 || config.hidden_width == 0 {
            return Err(Error::invalid("lags and network widths must be at least 1"));
        }
        let act = Activation::default();
        let (e, k, h, p) = (
            config.embedding_dim,
            config.message_dim,
            config.hidden_width,
            config.lags,
        );
        let g = FeedForwardNet::new(&[e + p, h, k], act, rng)?;
        let f_obs = FeedForwardNet::new(&[e + k, h, 1], act, rng)?;
        let f_conf = FeedForwardNet::new(&[e + k, h, 1], act, rng)?;
        let f_gauss = FeedForwardNet::new(&[d, h, 2 * r], act, rng)?;
        let z = DenseMatrix::from_fn(d + r, e, |_, _| config.embedding_init_std * rng.normal());
        Ok(Self {
            d,
            r,
            config,
            g,
            f_obs,
            f_conf,
            f_gauss,
            z,
            log_noise_scale: vec![0.0; d],
        })
    }

    pub fn num_observed(&self) -> usize {
        self.d
    }

    pub fn num_latent(&self) -> usize {
        self.r
    }

    pub fn config(&self) -> &ScmConfig {
        &self.config
    }

    pub fn lags(&self) -> usize {
        self.config.lags
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn embeddings_mut(&mut self) -> &mut DenseMatrix {
        &mut self.z
    }

    pub fn log_noise_scale(&self) -> &[f64] {
        &self.log_noise_scale
    }

    pub fn f_gauss(&self) -> &FeedForwardNet {
        &self.f_gauss
    }

    pub fn f_gauss_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.f_gauss
    }

    /// Message network shared by all nodes.
    pub fn g(&self) -> &FeedForwardNet {
        &self.g
    }

    pub fn f_obs(&self) -> &FeedForwardNet {
        &self.f_obs
    }

    pub fn f_conf(&self) -> &FeedForwardNet {
        &self.f_conf
    }

    pub fn f_obs_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.f_obs
    }

    pub fn f_conf_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.f_conf
    }

    pub fn g_mut(&mut self) -> &mut FeedForwardNet {
        &mut self.g
    }

    pub fn set_log_noise_scale(&mut self, node: usize, value: f64) {
        self.log_noise_scale[node] = value;
    }

    /// Posterior mean and scale of the confounders at one timestep.
    pub fn encode_confounders(&self, x_t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x_t.len() != self.d {
            return Err(Error::dim("encode_confounders input", self.d, x_t.len()));
        }
        if x_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "encode_confounders input".into(),
            });
        }
        let out = self.f_gauss.forward(x_t)?;
        let mu = out[..self.r].to_vec();
        let sigma = out[self.r..].iter().map(|&v| softplus(v)).collect();
        Ok((mu, sigma))
    }

    /// Encodes every row of a `T x d` panel.
    pub fn encode_panel(&self, x: &DenseMatrix) -> Result<ConfounderPosterior> {
        Ok(self.encode_with_tape(x)?.0)
    }

    pub(crate) fn encode_with_tape(
        &self,
        x: &DenseMatrix,
    ) -> Result<(ConfounderPosterior, crate::numerics::ForwardTape)> {
        let tape = self.f_gauss.forward_batch(x.clone())?;
        let out = tape.output();
        let r = self.r;
        let mu = DenseMatrix::from_fn(out.rows(), r, |t, k| out[(t, k)]);
        let sigma = DenseMatrix::from_fn(out.rows(), r, |t, k| softplus(out[(t, r + k)]).max(1e-300));
        Ok((ConfounderPosterior { mu, sigma }, tape))
    }

    /// Backpropagates `(d mu, d sigma)` through the encoder.
    pub(crate) fn encode_backward(
        &self,
        tape: &crate::numerics::ForwardTape,
        d_mu: &DenseMatrix,
        d_sigma: &DenseMatrix,
        grads: &mut NetGradients,
    ) -> Result<()> {
        let out = tape.output();
        let r = self.r;
        let upstream = DenseMatrix::from_fn(out.rows(), 2 * r, |t, c| {
            if c < r {
                d_mu[(t, c)]
            } else {
                d_sigma[(t, c - r)] * sigmoid(out[(t, c)])
            }
        });
        self.f_gauss.backward(tape, &upstream, grads)?;
        Ok(())
    }

    /// Predictive means of all observed nodes at one timestep.
    ///
    /// `x_history` is `p x d` and `c_history` is `p x r`; row `l` holds the
    /// values at lag `l + 1`. `graph` is a `(d+r) x (d+r)` (soft) adjacency.
    pub fn scn_predict(
        &self,
        x_history: &DenseMatrix,
        c_history: &DenseMatrix,
        graph: &DenseMatrix,
    ) -> Result<Vec<f64>> {
        let p = self.lags();
        if x_history.rows() != p || x_history.cols() != self.d {
            return Err(Error::dim(
                "scn_predict observed history",
                format!("{p}x{}", self.d),
                format!("{}x{}", x_history.rows(), x_history.cols()),
            ));
        }
        if c_history.rows() != p || c_history.cols() != self.r {
            return Err(Error::dim(
                "scn_predict confounder history",
                format!("{p}x{}", self.r),
                format!("{}x{}", c_history.rows(), c_history.cols()),
            ));
        }
        // Lay the history out as a panel whose last row is the target step.
        let x = DenseMatrix::from_fn(
            p + 1,
            self.d,
            |t, i| if t < p { x_history[(p - 1 - t, i)] } else { 0.0 },
        );
        let c = DenseMatrix::from_fn(
            p + 1,
            self.r,
            |t, k| if t < p { c_history[(p - 1 - t, k)] } else { 0.0 },
        );
        let pass = ScnPass::forward(self, &x, &c, &[p], std::slice::from_ref(graph))?;
        Ok(pass.means(0).column(0))
    }

    /// Per-node Gaussian log densities of `x[t]` given its history.
    pub fn log_likelihood(
        &self,
        x: &DenseMatrix,
        confounders: &DenseMatrix,
        graph: &DenseMatrix,
        t: usize,
    ) -> Result<Vec<f64>> {
        let p = self.lags();
        if t < p {
            return Err(Error::invalid(format!(
                "timestep {t} has less than {p} steps of history"
            )));
        }
        if t >= x.rows() {
            return Err(Error::OutOfRange {
                index: t,
                size: x.rows(),
            });
        }
        let pass = ScnPass::forward(self, x, confounders, &[t], std::slice::from_ref(graph))?;
        let means = pass.means(0);
        Ok((0..self.d)
            .map(|j| self.gaussian_log_density(j, x[(t, j)], means[(j, 0)]))
            .collect())
    }

    #[inline]
    pub(crate) fn gaussian_log_density(&self, node: usize, value: f64, mean: f64) -> f64 {
        let s = self.log_noise_scale[node];
        let z = (value - mean) * (-s).exp();
        -HALF_LN_2PI - s - 0.5 * z * z
    }

    pub fn zero_gradients(&self) -> ScmGradients {
        ScmGradients {
            g: self.g.zero_gradients(),
            f_obs: self.f_obs.zero_gradients(),
            f_conf: self.f_conf.zero_gradients(),
            f_gauss: self.f_gauss.zero_gradients(),
            z: DenseMatrix::zeros(self.z.rows(), self.z.cols()),
            log_noise_scale: vec![0.0; self.d],
        }
    }

    pub fn num_params(&self) -> usize {
        self.g.num_params()
            + self.f_obs.num_params()
            + self.f_conf.num_params()
            + self.f_gauss.num_params()
            + self.z.rows() * self.z.cols()
            + self.d
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.g.write_params(out);
        self.f_obs.write_params(out);
        self.f_conf.write_params(out);
        self.f_gauss.write_params(out);
        out.extend_from_slice(self.z.as_slice());
        out.extend_from_slice(&self.log_noise_scale);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = self.g.read_params(src);
        at += self.f_obs.read_params(&src[at..]);
        at += self.f_conf.read_params(&src[at..]);
        at += self.f_gauss.read_params(&src[at..]);
        let nz = self.z.rows() * self.z.cols();
        self.z.as_mut_slice().copy_from_slice(&src[at..at + nz]);
        at += nz;
        self.log_noise_scale.copy_from_slice(&src[at..at + self.d]);
        at + self.d
    }

    /// Offset and length of the `f_gauss` block in the flat layout.
    pub fn f_gauss_param_range(&self) -> std::ops::Range<usize> {
        let start = self.g.num_params() + self.f_obs.num_params() + self.f_conf.num_params();
        start..start + self.f_gauss.num_params()
    }
}

impl ScmGradients {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.g.write_flat(out);
        self.f_obs.write_flat(out);
        self.f_conf.write_flat(out);
        self.f_gauss.write_flat(out);
        out.extend_from_slice(self.z.as_slice());
        out.extend_from_slice(&self.log_noise_scale);
    }
}
