//! Magnified score `S = L + R_G + R_C`, its weighted form and the
//! acyclicity-plus-ancestrality constraint.

mod constraint;
mod objective;
mod terms;

pub use constraint::{h_constraint, h_constraint_with_gradient, magnified_constraint, ConstraintGradient};
pub use objective::{evaluate_objective, ObjectiveBatch, ObjectiveValue, TermMask};
pub use terms::{
    confounder_kl, data_fit, edge_entropy, graph_penalty, node_log_likelihoods, timestep_log_likelihoods,
    ConstraintSchedule, SampleWeights, ScoreBreakdown,
};
