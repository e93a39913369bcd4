//! Translation between the stock-flow and agent forms of a model.
//!
//! Stock-flow to agent: every stock becomes a class of agents and every flow
//! becomes a behaviour of the class it acts on. A flow whose rate is the stock
//! times some residual `h` is a per-agent hazard with rate `h`; an inflow
//! that ignores the stock is a population-level inflow. Everything else is
//! flagged and kept as a (signed) population-level rate.
//!
//! Agent to stock-flow: the agent form alone does not fix the population
//! rates, so a closure per behaviour must be supplied.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::abs::rng_from_seed;
use crate::expr::{BinOp, Expr};
use crate::model::{
    validate_agent, validate_stock_flow, AgentClass, AgentModel, Behavior, BehaviorKind, BehaviorTag,
    Diagnostic, Effect, Endpoint, Flow, ParameterSet, Stock, StockFlowModel,
};

/// Random points used to confirm a structural factorisation.
pub const CONFIRM_POINTS: usize = 100;
/// Relative tolerance of that confirmation.
pub const CONFIRM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    PerAgentDeath,
    PerAgentReproduction,
    PopulationInflow,
    Unmappable,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::PerAgentDeath => "per-agent death",
            FlowKind::PerAgentReproduction => "per-agent reproduction",
            FlowKind::PopulationInflow => "population inflow",
            FlowKind::Unmappable => "unmappable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowClassification {
    pub flow: String,
    pub stock: String,
    pub kind: FlowKind,
    /// Rate with the stock factor divided out, for per-agent kinds.
    pub residual: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConversionError {
    #[error("stock `{stock}` has initial value {value}, which is not a non-negative number")]
    InvalidInitial { stock: String, value: f64 },
    #[error("model is invalid: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Diagnostic>),
    #[error("no rate closure for behavior(s): {}", .0.join(", "))]
    MissingRateClosure(Vec<String>),
}

/// Drops one multiplicative occurrence of `name` from `expr`.
///
/// Succeeds only when `name` sits on a product/quotient path from the root
/// (through `*`, the numerator of `/`, and unary minus) and appears nowhere
/// else.
fn remove_factor(expr: &Expr, name: &str) -> Option<Expr> {
    if expr.occurrences(name) != 1 {
        return None;
    }
    strip(expr, name)
}

fn strip(expr: &Expr, name: &str) -> Option<Expr> {
    match expr {
        Expr::Var(v) if v == name => Some(Expr::Const(1.0)),
        Expr::Neg(inner) => strip(inner, name).map(|e| Expr::Neg(Box::new(e))),
        Expr::Binary(BinOp::Mul, l, r) => {
            if l.references(name) {
                strip(l, name).map(|e| times(e, (**r).clone()))
            } else {
                strip(r, name).map(|e| times((**l).clone(), e))
            }
        }
        Expr::Binary(BinOp::Div, l, r) if l.references(name) => {
            strip(l, name).map(|e| Expr::div(e, (**r).clone()))
        }
        _ => None,
    }
}

fn times(l: Expr, r: Expr) -> Expr {
    match (l, r) {
        (Expr::Const(c), e) | (e, Expr::Const(c)) if c == 1.0 => e,
        (l, r) => Expr::mul(l, r),
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= CONFIRM_REL_TOL * a.abs().max(b.abs())
}

/// Checks `rate == stock * residual` at seeded random positive points.
fn confirm_factor(rate: &Expr, stock: &str, residual: &Expr) -> bool {
    let vars: Vec<String> = rate.variables().into_iter().collect();
    let mut rng = rng_from_seed(0x5eed_f10e);
    let mut checked = 0;
    for _ in 0..CONFIRM_POINTS {
        let values: BTreeMap<&str, f64> = vars
            .iter()
            .map(|v| (v.as_str(), rng.random_range(0.1..10.0)))
            .collect();
        let lookup = |n: &str| values.get(n).copied();
        let (Ok(full), Ok(res)) = (rate.eval_with(&lookup), residual.eval_with(&lookup)) else {
            continue;
        };
        let s = values[stock];
        if !full.is_finite() || !res.is_finite() {
            continue;
        }
        if !close(full, s * res) {
            return false;
        }
        checked += 1;
    }
    checked > 0
}

/// Classifies `flow` from the point of view of `stock`.
pub fn classify_flow(flow: &Flow, stock: &str) -> FlowClassification {
    let outflow = flow.source.stock() == Some(stock);
    let residual = remove_factor(&flow.rate, stock).filter(|r| confirm_factor(&flow.rate, stock, r));
    let (kind, residual) = match (outflow, residual) {
        (true, Some(r)) => (FlowKind::PerAgentDeath, Some(r)),
        (false, Some(r)) => (FlowKind::PerAgentReproduction, Some(r)),
        (false, None) if !flow.rate.references(stock) => (FlowKind::PopulationInflow, None),
        _ => (FlowKind::Unmappable, None),
    };
    FlowClassification {
        flow: flow.name.clone(),
        stock: stock.to_string(),
        kind,
        residual,
    }
}

/// Summary of a stock-flow to agent conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionReport {
    pub model: String,
    pub classes: Vec<(String, u64)>,
    pub classifications: Vec<FlowClassification>,
    /// (behaviour, class, description, tag)
    pub behaviors: Vec<(String, String, String, BehaviorTag)>,
    pub flags: Vec<String>,
}

impl fmt::Display for ConversionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "agent form of stock-flow model `{}`", self.model)?;
        writeln!(f, "\nclasses")?;
        for (name, initial) in &self.classes {
            writeln!(f, "  {name} (initial {initial})")?;
        }
        writeln!(f, "\nbehaviors")?;
        for (class, _) in &self.classes {
            writeln!(f, "  {class}")?;
            for (name, _, what, tag) in self.behaviors.iter().filter(|b| &b.1 == class) {
                writeln!(f, "    {name}: {what} [{tag}]")?;
            }
        }
        writeln!(f, "\nclassifications")?;
        for c in &self.classifications {
            write!(f, "  {} ({}): {}", c.flow, c.stock, c.kind)?;
            if let Some(r) = &c.residual {
                write!(f, ", residual {r}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "\nflags")?;
        if self.flags.is_empty() {
            writeln!(f, "  none")?;
        }
        for flag in &self.flags {
            writeln!(f, "  {flag}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub model: AgentModel,
    pub report: ConversionReport,
}

pub fn sds_to_abs(model: &StockFlowModel) -> Result<Conversion, ConversionError> {
    for s in &model.stocks {
        if !(s.initial.is_finite() && s.initial >= 0.0) {
            return Err(ConversionError::InvalidInitial {
                stock: s.name.clone(),
                value: s.initial,
            });
        }
    }
    let diags = validate_stock_flow(model);
    if !diags.is_empty() {
        return Err(ConversionError::InvalidModel(diags));
    }

    let mut flags = Vec::new();
    let classes: Vec<AgentClass> = model
        .stocks
        .iter()
        .map(|s| {
            let initial = s.initial.round();
            if initial != s.initial {
                flags.push(format!(
                    "{}: initial value {} rounded to {initial} agents",
                    s.name, s.initial
                ));
            }
            AgentClass {
                name: s.name.clone(),
                initial: initial as u64,
                unit: s.unit.clone(),
            }
        })
        .collect();

    let mut behaviors = Vec::new();
    let mut classifications = Vec::new();
    let mut described = Vec::new();
    let mut push = |b: Behavior, what: String| {
        described.push((b.name.clone(), b.owner().to_string(), what, b.tag));
        behaviors.push(b);
    };
    for flow in &model.flows {
        match (&flow.source, &flow.sink) {
            (Endpoint::Stock(from), sink) => {
                let c = classify_flow(flow, from);
                match (&c.kind, sink) {
                    (FlowKind::PerAgentDeath, Endpoint::Boundary) => push(
                        hazard(flow, from, c.residual.clone().unwrap(), Effect::Die),
                        format!("dies at per-agent rate {}", c.residual.as_ref().unwrap()),
                    ),
                    (FlowKind::PerAgentDeath, Endpoint::Stock(to)) => push(
                        Behavior {
                            name: flow.name.clone(),
                            kind: BehaviorKind::Transform {
                                from: from.clone(),
                                to: to.clone(),
                                rate: c.residual.clone().unwrap(),
                            },
                            tag: BehaviorTag::Reactive,
                        },
                        format!("becomes {to} at per-agent rate {}", c.residual.as_ref().unwrap()),
                    ),
                    (_, sink) => {
                        flags.push(format!(
                            "{}: rate {} does not factor by {from}; kept as a population-level removal",
                            flow.name, flow.rate
                        ));
                        push(
                            removal(&flow.name, from, &flow.rate),
                            format!("removed at population rate {}", flow.rate),
                        );
                        if let Endpoint::Stock(to) = sink {
                            flags.push(format!(
                                "{}: split into a removal from {from} and an inflow into {to}",
                                flow.name
                            ));
                            push(
                                inflow(&format!("{}_in", flow.name), to, flow.rate.clone(), false, BehaviorTag::Reactive),
                                format!("arrives from {from} at population rate {}", flow.rate),
                            );
                        }
                    }
                }
                classifications.push(c);
            }
            (Endpoint::Boundary, Endpoint::Stock(to)) => {
                let c = classify_flow(flow, to);
                match c.kind {
                    FlowKind::PerAgentReproduction => push(
                        hazard(
                            flow,
                            to,
                            c.residual.clone().unwrap(),
                            Effect::Reproduce {
                                count: 1,
                                class: to.clone(),
                            },
                        ),
                        format!("reproduces at per-agent rate {}", c.residual.as_ref().unwrap()),
                    ),
                    FlowKind::PopulationInflow => push(
                        inflow(&flow.name, to, flow.rate.clone(), false, BehaviorTag::Reactive),
                        format!("created at population rate {}", flow.rate),
                    ),
                    _ => {
                        flags.push(format!(
                            "{}: rate {} depends on {to} but does not factor by it; kept as a signed population rate",
                            flow.name, flow.rate
                        ));
                        push(
                            inflow(&flow.name, to, flow.rate.clone(), true, BehaviorTag::Proactive),
                            format!("net change at population rate {}", flow.rate),
                        );
                    }
                }
                classifications.push(c);
            }
            (Endpoint::Boundary, Endpoint::Boundary) => unreachable!("validated model"),
        }
    }

    let agent = AgentModel {
        name: model.name.clone(),
        classes,
        behaviors,
        parameters: model.parameters.clone(),
        spatial: model.spatial.clone(),
    };
    let diags = validate_agent(&agent);
    if !diags.is_empty() {
        return Err(ConversionError::InvalidModel(diags));
    }
    let report = ConversionReport {
        model: model.name.clone(),
        classes: agent.classes.iter().map(|c| (c.name.clone(), c.initial)).collect(),
        classifications,
        behaviors: described,
        flags,
    };
    Ok(Conversion { model: agent, report })
}

fn hazard(flow: &Flow, class: &str, rate: Expr, effect: Effect) -> Behavior {
    let tag = match effect {
        Effect::Reproduce { .. } => BehaviorTag::Proactive,
        Effect::Die => BehaviorTag::Reactive,
    };
    Behavior {
        name: flow.name.clone(),
        kind: BehaviorKind::PerAgentHazard {
            class: class.to_string(),
            rate,
            effect,
        },
        tag,
    }
}

fn inflow(name: &str, class: &str, rate: Expr, signed: bool, tag: BehaviorTag) -> Behavior {
    Behavior {
        name: name.to_string(),
        kind: BehaviorKind::PopulationInflow {
            class: class.to_string(),
            rate,
            signed,
        },
        tag,
    }
}

fn removal(name: &str, class: &str, rate: &Expr) -> Behavior {
    inflow(name, class, Expr::Neg(Box::new(rate.clone())), true, BehaviorTag::Reactive)
}

/// Population-level rate per behaviour, plus parameters they may use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateClosureSet {
    pub rates: BTreeMap<String, Expr>,
    pub parameters: ParameterSet,
}

impl RateClosureSet {
    pub fn new(rates: BTreeMap<String, Expr>, parameters: ParameterSet) -> Self {
        Self { rates, parameters }
    }

    pub fn parse(text: &str) -> Result<Self, crate::modelfile::ModelFileError> {
        let (rates, parameters) = crate::modelfile::parse_closures_file(text)?;
        Ok(Self { rates, parameters })
    }

    pub fn to_file(&self) -> String {
        crate::modelfile::write_closures_file(&self.rates, &self.parameters)
    }
}

/// Closures implied by the agent rules themselves: count times per-agent
/// rate for hazards and transforms, the rate itself for inflows.
pub fn residual_closures(model: &AgentModel) -> RateClosureSet {
    let rates = model
        .behaviors
        .iter()
        .map(|b| {
            let rate = match &b.kind {
                BehaviorKind::PerAgentHazard { class, rate, effect } => {
                    let total = Expr::mul(Expr::var(class), rate.clone());
                    match effect {
                        Effect::Reproduce { count, .. } if *count != 1 => {
                            Expr::mul(Expr::Const(f64::from(*count)), total)
                        }
                        _ => total,
                    }
                }
                BehaviorKind::Transform { from, rate, .. } => Expr::mul(Expr::var(from), rate.clone()),
                BehaviorKind::PopulationInflow { rate, .. } => rate.clone(),
            };
            (b.name.clone(), rate)
        })
        .collect();
    RateClosureSet::new(rates, ParameterSet::new())
}

pub fn abs_to_sds(model: &AgentModel, closures: &RateClosureSet) -> Result<StockFlowModel, ConversionError> {
    let missing: Vec<String> = model
        .behaviors
        .iter()
        .filter(|b| !closures.rates.contains_key(&b.name))
        .map(|b| b.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ConversionError::MissingRateClosure(missing));
    }
    let stocks = model
        .classes
        .iter()
        .map(|c| Stock {
            name: c.name.clone(),
            initial: c.initial as f64,
            unit: c.unit.clone(),
        })
        .collect();
    let stock = |s: &str| Endpoint::Stock(s.to_string());
    let flows = model
        .behaviors
        .iter()
        .map(|b| {
            let (source, sink) = match &b.kind {
                BehaviorKind::PerAgentHazard {
                    class,
                    effect: Effect::Die,
                    ..
                } => (stock(class), Endpoint::Boundary),
                BehaviorKind::PerAgentHazard {
                    effect: Effect::Reproduce { class, .. },
                    ..
                } => (Endpoint::Boundary, stock(class)),
                BehaviorKind::PopulationInflow { class, .. } => (Endpoint::Boundary, stock(class)),
                BehaviorKind::Transform { from, to, .. } => (stock(from), stock(to)),
            };
            Flow {
                name: b.name.clone(),
                source,
                sink,
                rate: closures.rates[&b.name].clone(),
            }
        })
        .collect();
    let mut parameters = model.parameters.clone();
    for (name, p) in closures.parameters.iter() {
        if !parameters.insert(name, p.value, p.unit.clone()) {
            parameters.set(name, p.value);
        }
    }
    let out = StockFlowModel {
        name: model.name.clone(),
        stocks,
        flows,
        parameters,
        spatial: model.spatial.clone(),
    };
    let diags = validate_stock_flow(&out);
    if !diags.is_empty() {
        return Err(ConversionError::InvalidModel(diags));
    }
    Ok(out)
}
