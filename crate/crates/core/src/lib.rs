//! Deterministic stock-flow and stochastic agent-based simulation of the same
//! population model, with conversion between the two forms and a harness that
//! runs them side by side.

pub mod abs;
pub mod bundled;
pub mod conversion;
pub mod error;
pub mod expr;
pub mod harness;
pub mod model;
pub mod modelfile;
pub mod sds;
pub mod spatial;

pub use error::SimError;
pub use expr::{parse_expression, Expr};
pub use model::{AgentModel, ModelDefinition, StockFlowModel};
