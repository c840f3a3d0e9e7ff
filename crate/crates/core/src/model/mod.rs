//! Magnified structural causal model: edge posterior over observed plus
//! latent nodes, confounder encoder and the shared structural networks.

mod checkpoint;
pub(crate) mod engine;
mod graph;
mod posterior;
mod scm;
mod state;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use graph::{decompose, decompose_probabilities, MixedGraph};
pub use posterior::AdmgPosterior;
pub use scm::{ConfounderPosterior, ScmConfig, ScmGradients, ScmParameters};
pub use state::ModelState;
