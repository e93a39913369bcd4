use thiserror::Error;

use crate::expr::ExprError;
use crate::model::Diagnostic;

/// Failures raised by the simulation engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("model is invalid: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error("flow `{flow}`: {source}")]
    Flow {
        flow: String,
        #[source]
        source: ExprError,
    },
    #[error("behavior `{behavior}`: {source}")]
    Behavior {
        behavior: String,
        #[source]
        source: ExprError,
    },
    #[error("behavior `{behavior}`: negative rate {rate}")]
    NegativeRate { behavior: String, rate: f64 },
    #[error("behavior `{behavior}`: non-finite rate {rate}")]
    NonFiniteRate { behavior: String, rate: f64 },
    #[error("stock `{stock}` became non-finite")]
    NonFinite { stock: String },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("replication with seed {seed}: {source}")]
    Replication {
        seed: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error("{} replication(s) failed; seeds: {}", .0.len(), .0.iter().map(|(s, _)| s.to_string()).collect::<Vec<_>>().join(", "))]
    Ensemble(Vec<(u64, SimError)>),
}
