use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdmgPosterior, ScmParameters};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, FeedForwardNet};

pub const CHECKPOINT_FORMAT: &str = "partial-rca/checkpoint/1";

/// Everything needed to reuse a fitted model on the panel it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub num_observed: usize,
    pub num_latent: usize,
    pub lags: usize,
    pub metric_names: Vec<String>,
    /// Per-column `(mean, std)` applied before fitting.
    pub standardization: Vec<(f64, f64)>,
    /// 1 where an edge is structurally allowed.
    pub mask: DenseMatrix,
    pub posterior: AdmgPosterior,
    pub scm: ScmParameters,
    pub weight_net: Option<FeedForwardNet>,
    pub tau: f64,
    /// Hex SHA-256 of the canonical training configuration.
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn mask_of(post: &AdmgPosterior) -> DenseMatrix {
        let n = post.num_nodes();
        DenseMatrix::from_fn(n, n, |i, j| if post.is_allowed(i, j) { 1.0 } else { 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        let d = self.num_observed;
        if self.metric_names.len() != d || self.standardization.len() != d {
            return Err(Error::dim("checkpoint metric list", d, self.metric_names.len()));
        }
        if self.posterior.num_observed() != d
            || self.posterior.num_latent() != self.num_latent
            || self.scm.num_observed() != d
            || self.scm.num_latent() != self.num_latent
            || self.scm.lags() != self.lags
        {
            return Err(Error::invalid("checkpoint dimensions are inconsistent"));
        }
        if self.mask != Self::mask_of(&self.posterior) {
            return Err(Error::invalid("checkpoint mask does not match the structural mask"));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        ck.validate()?;
        Ok(ck)
    }
}
