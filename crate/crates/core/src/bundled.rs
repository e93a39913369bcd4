//! Model files shipped with the crate.
//!
//! | name           | form        | content                                         |
//! |----------------|-------------|-------------------------------------------------|
//! | `kp3`          | stock-flow  | effector / tumour / IL-2, logistic growth aT(1-bT) |
//! | `kp3-literal`  | stock-flow  | same, with the growth term a(1-bT)              |
//! | `kuz2`         | stock-flow  | effector / tumour with Kuznetsov closures       |
//! | `kuz2-spatial` | stock-flow  | kill rate capped at E, plus grid settings       |
//! | `kuz2`         | agent       | hand-written agent form of `kuz2`               |
//!
//! `kuz2.closures` holds the population rates used to rebuild the stock-flow
//! form from the agent form.

use crate::model::{AgentModel, ModelDefinition, StockFlowModel};
use crate::modelfile::{parse_model_file, ModelFileError};

const FILES: &[(&str, &str)] = &[
    ("kp3.sds", include_str!("../models/kp3.sds")),
    ("kp3-literal.sds", include_str!("../models/kp3-literal.sds")),
    ("kuz2.sds", include_str!("../models/kuz2.sds")),
    ("kuz2-spatial.sds", include_str!("../models/kuz2-spatial.sds")),
    ("kuz2.abs", include_str!("../models/kuz2.abs")),
    ("kuz2.closures", include_str!("../models/kuz2.closures")),
];

/// Prefix that selects a bundled file wherever a model path is accepted.
pub const PREFIX: &str = "bundled:";

/// File names of every bundled file.
pub fn names() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|(n, _)| *n)
}

/// Raw text of a bundled file, e.g. `"kuz2.sds"`.
pub fn source(file: &str) -> Option<&'static str> {
    FILES.iter().find(|(n, _)| *n == file).map(|(_, t)| *t)
}

fn load(file: &str) -> Option<Result<ModelDefinition, ModelFileError>> {
    source(file).map(parse_model_file)
}

/// Bundled stock-flow model by short name (`kp3`, `kp3-literal`, `kuz2`, `kuz2-spatial`).
pub fn stock_flow(name: &str) -> Option<StockFlowModel> {
    match load(&format!("{name}.sds"))? {
        Ok(ModelDefinition::StockFlow(m)) => Some(m),
        Ok(ModelDefinition::Agent(_)) => None,
        Err(e) => panic!("bundled model {name}.sds is invalid: {e}"),
    }
}

/// Bundled hand-written agent model by short name (`kuz2`).
pub fn agent(name: &str) -> Option<AgentModel> {
    match load(&format!("{name}.abs"))? {
        Ok(ModelDefinition::Agent(m)) => Some(m),
        Ok(ModelDefinition::StockFlow(_)) => None,
        Err(e) => panic!("bundled model {name}.abs is invalid: {e}"),
    }
}
