pub mod error;
pub mod evalmetrics;
pub mod localize;
pub mod model;
pub mod numerics;
pub mod panel;
pub mod pipeline;
pub mod scheduler;
pub mod score;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
