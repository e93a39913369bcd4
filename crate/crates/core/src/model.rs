//! Intermediate representation shared by both paradigms.
//!
//! A [`StockFlowModel`] is the aggregate (ODE) view: stocks joined by flows
//! with symbolic rates. An [`AgentModel`] is the individual view: agent
//! classes whose behaviours carry per-agent hazards or population-level
//! creation rates. Both are plain data and immutable once validated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;

/// Flow endpoint name that stands for the model boundary (a cloud in
/// stock-and-flow diagrams).
pub const BOUNDARY: &str = "BOUNDARY";

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: f64,
    pub unit: Option<String>,
}

/// Named real-valued parameters with optional unit annotations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter, returning `false` if the name already exists.
    pub fn insert(&mut self, name: &str, value: f64, unit: Option<String>) -> bool {
        if self.entries.contains_key(name) {
            return false;
        }
        self.entries.insert(name.to_string(), Parameter { value, unit });
        true
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.entries
            .entry(name.to_string())
            .and_modify(|p| p.value = value)
            .or_insert(Parameter { value, unit: None });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).map(|p| p.value)
    }

    pub fn unit(&self, name: &str) -> Option<&str> {
        self.entries.get(name).and_then(|p| p.unit.as_deref())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stock {
    pub name: String,
    pub initial: f64,
    pub unit: Option<String>,
}

/// One end of a flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Boundary,
    Stock(String),
}

impl Endpoint {
    pub fn parse(name: &str) -> Endpoint {
        if name == BOUNDARY {
            Endpoint::Boundary
        } else {
            Endpoint::Stock(name.to_string())
        }
    }

    pub fn stock(&self) -> Option<&str> {
        match self {
            Endpoint::Boundary => None,
            Endpoint::Stock(s) => Some(s),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Boundary => f.write_str(BOUNDARY),
            Endpoint::Stock(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub name: String,
    pub source: Endpoint,
    pub sink: Endpoint,
    pub rate: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StockFlowModel {
    pub name: String,
    pub stocks: Vec<Stock>,
    pub flows: Vec<Flow>,
    pub parameters: ParameterSet,
    /// Grid settings, used when the agent form of this model is run spatially.
    pub spatial: Option<SpatialConfig>,
}

impl StockFlowModel {
    pub fn stock(&self, name: &str) -> Option<&Stock> {
        self.stocks.iter().find(|s| s.name == name)
    }

    pub fn flow(&self, name: &str) -> Option<&Flow> {
        self.flows.iter().find(|f| f.name == name)
    }

    pub fn stock_names(&self) -> Vec<&str> {
        self.stocks.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn inflows<'a>(&'a self, stock: &'a str) -> impl Iterator<Item = &'a Flow> + 'a {
        self.flows
            .iter()
            .filter(move |f| f.sink.stock() == Some(stock))
    }

    pub fn outflows<'a>(&'a self, stock: &'a str) -> impl Iterator<Item = &'a Flow> + 'a {
        self.flows
            .iter()
            .filter(move |f| f.source.stock() == Some(stock))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorTag {
    Reactive,
    Proactive,
}

impl fmt::Display for BehaviorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BehaviorTag::Reactive => "reactive",
            BehaviorTag::Proactive => "proactive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Die,
    /// Each firing creates `count` new agents of `class`.
    Reproduce { count: u32, class: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorKind {
    /// Fires independently for every existing agent of `class`.
    PerAgentHazard {
        class: String,
        rate: Expr,
        effect: Effect,
    },
    /// Creates agents of `class` at a population-level rate.
    ///
    /// A `signed` inflow is a net rate: when it evaluates negative, agents
    /// are removed instead of created.
    PopulationInflow {
        class: String,
        rate: Expr,
        signed: bool,
    },
    /// Per-agent hazard that moves an agent from one class to another.
    Transform { from: String, to: String, rate: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    pub name: String,
    pub kind: BehaviorKind,
    pub tag: BehaviorTag,
}

impl Behavior {
    /// The class this behaviour belongs to (whose agents act or are created).
    pub fn owner(&self) -> &str {
        match &self.kind {
            BehaviorKind::PerAgentHazard { class, .. } => class,
            BehaviorKind::PopulationInflow { class, .. } => class,
            BehaviorKind::Transform { from, .. } => from,
        }
    }

    pub fn rate(&self) -> &Expr {
        match &self.kind {
            BehaviorKind::PerAgentHazard { rate, .. }
            | BehaviorKind::PopulationInflow { rate, .. }
            | BehaviorKind::Transform { rate, .. } => rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentClass {
    pub name: String,
    pub initial: u64,
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub name: String,
    pub classes: Vec<AgentClass>,
    pub behaviors: Vec<Behavior>,
    pub parameters: ParameterSet,
    pub spatial: Option<SpatialConfig>,
}

impl AgentModel {
    pub fn class(&self, name: &str) -> Option<&AgentClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn behavior(&self, name: &str) -> Option<&Behavior> {
        self.behaviors.iter().find(|b| b.name == name)
    }

    pub fn behaviors_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a Behavior> + 'a {
        self.behaviors.iter().filter(move |b| b.owner() == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Random,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NewbornPlacement {
    Random,
    Adjacent,
}

/// Lattice settings for the spatial engine.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConfig {
    pub width: u32,
    pub height: u32,
    /// King moves per step; 0 disables movement.
    pub speed: u32,
    /// Chebyshev radius within which a hunter can kill; `u32::MAX` means unbounded.
    pub kill_radius: u32,
    pub placement: Placement,
    pub newborn: NewbornPlacement,
    /// Class whose agents move and kill.
    pub hunter: String,
    /// Class whose agents are stationary targets.
    pub prey: String,
    /// Behaviour replaced by contact killing in the spatial engine.
    pub contact_behavior: String,
    /// Explicit initial coordinates per class, in id order.
    pub positions: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            width: 100,
            height: 100,
            speed: 1,
            kill_radius: 0,
            placement: Placement::Random,
            newborn: NewbornPlacement::Random,
            hunter: "E".to_string(),
            prey: "T".to_string(),
            contact_behavior: "kill".to_string(),
            positions: BTreeMap::new(),
        }
    }
}

/// Either form a model file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelDefinition {
    StockFlow(StockFlowModel),
    Agent(AgentModel),
}

impl ModelDefinition {
    pub fn name(&self) -> &str {
        match self {
            ModelDefinition::StockFlow(m) => &m.name,
            ModelDefinition::Agent(m) => &m.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiagnosticKind {
    DuplicateName,
    NonFiniteParameter,
    NegativeInitialValue,
    NonFiniteInitialValue,
    UnknownReference,
    BoundaryToBoundary,
    UnresolvedVariable,
    SelfReferentialHazard,
    InvalidReproduction,
    InvalidSpatial,
}

/// One invariant violation found by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Default)]
struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn push(&mut self, kind: DiagnosticKind, message: String) {
        self.0.push(Diagnostic { kind, message });
    }
}

/// Checks every IR invariant; an empty list means the model is valid.
pub fn validate_model(model: &ModelDefinition) -> Vec<Diagnostic> {
    match model {
        ModelDefinition::StockFlow(m) => validate_stock_flow(m),
        ModelDefinition::Agent(m) => validate_agent(m),
    }
}

pub fn validate_stock_flow(model: &StockFlowModel) -> Vec<Diagnostic> {
    let mut d = Diagnostics::default();
    check_parameters(&model.parameters, &mut d);

    let mut seen = BTreeSet::new();
    for stock in &model.stocks {
        if !seen.insert(stock.name.as_str()) || model.parameters.contains(&stock.name) {
            d.push(
                DiagnosticKind::DuplicateName,
                format!("duplicate name `{}`", stock.name),
            );
        }
        if stock.name == BOUNDARY {
            d.push(
                DiagnosticKind::DuplicateName,
                format!("stock may not be named `{BOUNDARY}`"),
            );
        }
        if !stock.initial.is_finite() {
            d.push(
                DiagnosticKind::NonFiniteInitialValue,
                format!("non-finite initial value for stock `{}`", stock.name),
            );
        } else if stock.initial < 0.0 {
            d.push(
                DiagnosticKind::NegativeInitialValue,
                format!("negative initial value for stock `{}`", stock.name),
            );
        }
    }

    let mut flow_names = BTreeSet::new();
    for flow in &model.flows {
        if !flow_names.insert(flow.name.as_str()) {
            d.push(
                DiagnosticKind::DuplicateName,
                format!("duplicate flow name `{}`", flow.name),
            );
        }
        for end in [&flow.source, &flow.sink] {
            if let Endpoint::Stock(s) = end {
                if model.stock(s).is_none() {
                    d.push(
                        DiagnosticKind::UnknownReference,
                        format!("flow `{}` references unknown stock `{s}`", flow.name),
                    );
                }
            }
        }
        if flow.source == Endpoint::Boundary && flow.sink == Endpoint::Boundary {
            d.push(
                DiagnosticKind::BoundaryToBoundary,
                format!("flow `{}` has no stock endpoint", flow.name),
            );
        }
        for var in flow.rate.variables() {
            if model.stock(&var).is_none() && !model.parameters.contains(&var) {
                d.push(
                    DiagnosticKind::UnresolvedVariable,
                    format!("flow `{}` uses undeclared name `{var}`", flow.name),
                );
            }
        }
    }
    if let Some(spatial) = &model.spatial {
        let classes: Vec<&str> = model.stocks.iter().map(|s| s.name.as_str()).collect();
        check_spatial(spatial, &classes, &mut d);
    }
    d.0
}

pub fn validate_agent(model: &AgentModel) -> Vec<Diagnostic> {
    let mut d = Diagnostics::default();
    check_parameters(&model.parameters, &mut d);

    let mut seen = BTreeSet::new();
    for class in &model.classes {
        if !seen.insert(class.name.as_str()) || model.parameters.contains(&class.name) {
            d.push(
                DiagnosticKind::DuplicateName,
                format!("duplicate name `{}`", class.name),
            );
        }
    }

    let known_class = |name: &str| model.class(name).is_some();
    let mut behavior_names = BTreeSet::new();
    for b in &model.behaviors {
        if !behavior_names.insert(b.name.as_str()) {
            d.push(
                DiagnosticKind::DuplicateName,
                format!("duplicate behavior name `{}`", b.name),
            );
        }
        let mut referenced = vec![b.owner()];
        match &b.kind {
            BehaviorKind::PerAgentHazard {
                class,
                rate,
                effect,
            } => {
                if rate.references(class) {
                    d.push(
                        DiagnosticKind::SelfReferentialHazard,
                        format!(
                            "self-referential hazard: behavior `{}` uses the count of its own class `{class}`",
                            b.name
                        ),
                    );
                }
                if let Effect::Reproduce { count, class: target } = effect {
                    referenced.push(target);
                    if *count == 0 {
                        d.push(
                            DiagnosticKind::InvalidReproduction,
                            format!("behavior `{}` reproduces zero agents", b.name),
                        );
                    }
                }
            }
            BehaviorKind::PopulationInflow { .. } => {}
            BehaviorKind::Transform { from, to, rate } => {
                referenced.push(to);
                if rate.references(from) {
                    d.push(
                        DiagnosticKind::SelfReferentialHazard,
                        format!(
                            "self-referential hazard: behavior `{}` uses the count of its own class `{from}`",
                            b.name
                        ),
                    );
                }
            }
        }
        for class in referenced {
            if !known_class(class) {
                d.push(
                    DiagnosticKind::UnknownReference,
                    format!("behavior `{}` references unknown class `{class}`", b.name),
                );
            }
        }
        for var in b.rate().variables() {
            if !known_class(&var) && !model.parameters.contains(&var) {
                d.push(
                    DiagnosticKind::UnresolvedVariable,
                    format!("behavior `{}` uses undeclared name `{var}`", b.name),
                );
            }
        }
    }
    if let Some(spatial) = &model.spatial {
        let classes: Vec<&str> = model.classes.iter().map(|c| c.name.as_str()).collect();
        check_spatial(spatial, &classes, &mut d);
        for class in &model.classes {
            if let Some(pos) = spatial.positions.get(&class.name) {
                if spatial.placement == Placement::Explicit && pos.len() as u64 != class.initial {
                    d.push(
                        DiagnosticKind::InvalidSpatial,
                        format!(
                            "explicit placement lists {} positions for `{}` but its initial count is {}",
                            pos.len(),
                            class.name,
                            class.initial
                        ),
                    );
                }
            }
        }
    }
    d.0
}

fn check_parameters(params: &ParameterSet, d: &mut Diagnostics) {
    for (name, p) in params.iter() {
        if !p.value.is_finite() {
            d.push(
                DiagnosticKind::NonFiniteParameter,
                format!("parameter `{name}` is not finite"),
            );
        }
    }
}

fn check_spatial(spatial: &SpatialConfig, classes: &[&str], d: &mut Diagnostics) {
    if spatial.width == 0 || spatial.height == 0 {
        d.push(
            DiagnosticKind::InvalidSpatial,
            "grid width and height must be at least 1".to_string(),
        );
    }
    for (role, class) in [("hunter", &spatial.hunter), ("prey", &spatial.prey)] {
        if !classes.contains(&class.as_str()) {
            d.push(
                DiagnosticKind::InvalidSpatial,
                format!("spatial {role} class `{class}` is not declared"),
            );
        }
    }
    if spatial.hunter == spatial.prey {
        d.push(
            DiagnosticKind::InvalidSpatial,
            "hunter and prey must be different classes".to_string(),
        );
    }
    for (class, positions) in &spatial.positions {
        if !classes.contains(&class.as_str()) {
            d.push(
                DiagnosticKind::InvalidSpatial,
                format!("positions given for undeclared class `{class}`"),
            );
        }
        for &(x, y) in positions {
            if x >= spatial.width || y >= spatial.height {
                d.push(
                    DiagnosticKind::InvalidSpatial,
                    format!("position ({x},{y}) of `{class}` lies outside the grid"),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn agent_model(rate: &str) -> AgentModel {
        let mut parameters = ParameterSet::new();
        parameters.insert("mu", 0.1, None);
        AgentModel {
            name: "t".into(),
            classes: vec![
                AgentClass { name: "E".into(), initial: 3, unit: None },
                AgentClass { name: "T".into(), initial: 3, unit: None },
            ],
            behaviors: vec![Behavior {
                name: "death".into(),
                kind: BehaviorKind::PerAgentHazard {
                    class: "E".into(),
                    rate: parse_expression(rate).unwrap(),
                    effect: Effect::Die,
                },
                tag: BehaviorTag::Reactive,
            }],
            parameters,
            spatial: None,
        }
    }

    #[test]
    fn self_referential_hazard_is_reported() {
        let diags = validate_agent(&agent_model("mu*E"));
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::SelfReferentialHazard);
        assert!(diags[0].message.contains("self-referential hazard"));
        assert!(validate_agent(&agent_model("mu*T")).is_empty());
    }

    #[test]
    fn negative_initial_stock_is_reported() {
        let model = StockFlowModel {
            name: "neg".into(),
            stocks: vec![Stock { name: "S".into(), initial: -1.0, unit: None }],
            flows: vec![Flow {
                name: "decay".into(),
                source: Endpoint::Stock("S".into()),
                sink: Endpoint::Boundary,
                rate: parse_expression("S").unwrap(),
            }],
            parameters: ParameterSet::new(),
            spatial: None,
        };
        let diags = validate_stock_flow(&model);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("negative initial value"));
    }

    #[test]
    fn undeclared_names_and_boundary_flows() {
        let model = StockFlowModel {
            name: "bad".into(),
            stocks: vec![Stock { name: "S".into(), initial: 1.0, unit: None }],
            flows: vec![
                Flow {
                    name: "f".into(),
                    source: Endpoint::Boundary,
                    sink: Endpoint::Boundary,
                    rate: parse_expression("k*S").unwrap(),
                },
                Flow {
                    name: "g".into(),
                    source: Endpoint::Stock("X".into()),
                    sink: Endpoint::Stock("S".into()),
                    rate: parse_expression("1").unwrap(),
                },
            ],
            parameters: ParameterSet::new(),
            spatial: None,
        };
        let kinds: Vec<_> = validate_stock_flow(&model).into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::BoundaryToBoundary));
        assert!(kinds.contains(&DiagnosticKind::UnresolvedVariable));
        assert!(kinds.contains(&DiagnosticKind::UnknownReference));
    }

    #[test]
    fn spatial_bounds_are_checked() {
        let mut model = agent_model("mu");
        let mut spatial = SpatialConfig { width: 0, ..SpatialConfig::default() };
        spatial.positions.insert("E".into(), vec![(200, 1)]);
        model.spatial = Some(spatial);
        let diags = validate_agent(&model);
        assert!(diags.iter().all(|d| d.kind == DiagnosticKind::InvalidSpatial));
        assert!(diags.len() >= 2);
    }
}
