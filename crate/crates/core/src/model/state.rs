use serde::{Deserialize, Serialize};

use super::{AdmgPosterior, ScmParameters};

/// Edge posterior and structural networks trained together. The flat
/// parameter layout is the posterior block followed by the network block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub posterior: AdmgPosterior,
    pub scm: ScmParameters,
}

impl ModelState {
    pub fn num_params(&self) -> usize {
        self.posterior.num_params() + self.scm.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.posterior.write_params(&mut out);
        self.scm.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let at = self.posterior.read_params(flat);
        self.scm.read_params(&flat[at..]);
    }

    /// Start of the network block in the flat layout.
    pub fn scm_offset(&self) -> usize {
        self.posterior.num_params()
    }
}
