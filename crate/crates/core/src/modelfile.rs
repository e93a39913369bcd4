//! Line-oriented model files.
//!
//! ```text
//! # comment
//! [model]
//! name = kuz2
//! [parameters]
//! a = 1.636 [1/day]
//! [stocks]
//! T = 100 [cells]
//! [flows]
//! growth: BOUNDARY -> T, rate = a*T*(1-b*T)
//! ```
//!
//! Agent-form files use `[agents]` (`name = count [unit]`) and
//! `[behaviors]`:
//!
//! ```text
//! apoptosis: die E, rate = d, reactive
//! proliferation: reproduce E -> E x1, rate = p*T/(g+T), proactive
//! recruitment: inflow E, rate = c*T, reactive
//! growth: inflow T, rate = a*T*(1-b*T), proactive, signed
//! maturation: transform A -> B, rate = k, reactive
//! ```
//!
//! Either form may carry a `[spatial]` section. Closure files hold a
//! `[closures]` section of `behavior = expression` lines plus optional
//! `[parameters]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::expr::{parse_expression, Expr, ExprError};
use crate::model::{
    validate_model, AgentClass, AgentModel, Behavior, BehaviorKind, BehaviorTag, Diagnostic,
    Effect, Endpoint, Flow, ModelDefinition, NewbornPlacement, ParameterSet, Placement,
    SpatialConfig, Stock, StockFlowModel, BOUNDARY,
};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Expression {
        line: usize,
        #[source]
        source: ExprError,
    },
    #[error("line {line}: unknown stock reference `{name}`")]
    UnknownStock { line: usize, name: String },
    #[error("line {line}: unknown agent class `{name}`")]
    UnknownClass { line: usize, name: String },
    #[error("line {line}: duplicate name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("file mixes stock-and-flow and agent sections")]
    MixedForms,
    #[error("model is invalid: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Model,
    Parameters,
    Stocks,
    Flows,
    Agents,
    Behaviors,
    Spatial,
    Closures,
}

impl Section {
    fn parse(name: &str) -> Option<Section> {
        Some(match name {
            "model" => Section::Model,
            "parameters" => Section::Parameters,
            "stocks" => Section::Stocks,
            "flows" => Section::Flows,
            "agents" => Section::Agents,
            "behaviors" | "behaviours" => Section::Behaviors,
            "spatial" => Section::Spatial,
            "closures" => Section::Closures,
            _ => return None,
        })
    }
}

struct Line<'a> {
    number: usize,
    text: &'a str,
}

/// Splits a file into sections, dropping comments and blank lines.
fn sections(text: &str) -> Result<Vec<(Section, Vec<Line<'_>>)>, ModelFileError> {
    let mut out: Vec<(Section, Vec<Line<'_>>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let section = Section::parse(header.trim()).ok_or_else(|| ModelFileError::Syntax {
                line: number,
                message: format!("unknown section [{}]", header.trim()),
            })?;
            if out.iter().any(|(s, _)| *s == section) {
                return Err(ModelFileError::Syntax {
                    line: number,
                    message: format!("section [{}] appears twice", header.trim()),
                });
            }
            out.push((section, Vec::new()));
            continue;
        }
        match out.last_mut() {
            Some((_, lines)) => lines.push(Line { number, text: content }),
            None => {
                return Err(ModelFileError::Syntax {
                    line: number,
                    message: "content before the first section header".to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn syntax(line: usize, message: impl Into<String>) -> ModelFileError {
    ModelFileError::Syntax {
        line,
        message: message.into(),
    }
}

fn split_assignment<'a>(line: &Line<'a>) -> Result<(&'a str, &'a str), ModelFileError> {
    let (k, v) = line
        .text
        .split_once('=')
        .ok_or_else(|| syntax(line.number, "expected `name = value`"))?;
    let key = k.trim();
    if !is_identifier(key) {
        return Err(syntax(line.number, format!("invalid name `{key}`")));
    }
    Ok((key, v.trim()))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// `1.5 [cells]` → (1.5 text, Some("cells"))
fn split_unit(value: &str) -> (&str, Option<String>) {
    match value.find('[') {
        Some(open) if value.ends_with(']') => (
            value[..open].trim(),
            Some(value[open + 1..value.len() - 1].trim().to_string()),
        ),
        _ => (value, None),
    }
}

fn parse_real(line: usize, text: &str) -> Result<f64, ModelFileError> {
    text.parse::<f64>()
        .map_err(|_| syntax(line, format!("expected a number, found `{text}`")))
}

fn parse_expr_at(line: usize, text: &str) -> Result<Expr, ModelFileError> {
    parse_expression(text).map_err(|source| ModelFileError::Expression { line, source })
}

fn parse_parameters(lines: &[Line<'_>]) -> Result<ParameterSet, ModelFileError> {
    let mut params = ParameterSet::new();
    for line in lines {
        let (name, rest) = split_assignment(line)?;
        let (value, unit) = split_unit(rest);
        let value = parse_real(line.number, value)?;
        if !params.insert(name, value, unit) {
            return Err(ModelFileError::DuplicateName {
                line: line.number,
                name: name.to_string(),
            });
        }
    }
    Ok(params)
}

fn parse_model_name(lines: &[Line<'_>]) -> Result<Option<String>, ModelFileError> {
    let mut name = None;
    for line in lines {
        match split_assignment(line)? {
            ("name", v) if !v.is_empty() => name = Some(v.to_string()),
            (k, _) => return Err(syntax(line.number, format!("unknown [model] key `{k}`"))),
        }
    }
    Ok(name)
}

/// Parses and validates a model file of either form.
pub fn parse_model_file(text: &str) -> Result<ModelDefinition, ModelFileError> {
    let secs = sections(text)?;
    let get = |s: Section| secs.iter().find(|(k, _)| *k == s).map(|(_, l)| l.as_slice());

    let name = match get(Section::Model) {
        Some(lines) => parse_model_name(lines)?,
        None => None,
    }
    .unwrap_or_else(|| "model".to_string());
    let parameters = match get(Section::Parameters) {
        Some(lines) => parse_parameters(lines)?,
        None => ParameterSet::new(),
    };
    let spatial = get(Section::Spatial).map(parse_spatial).transpose()?;

    let has_sds = get(Section::Stocks).is_some() || get(Section::Flows).is_some();
    let has_abs = get(Section::Agents).is_some() || get(Section::Behaviors).is_some();
    let model = match (has_sds, has_abs) {
        (true, true) => return Err(ModelFileError::MixedForms),
        (false, false) => return Err(ModelFileError::MissingSection("stocks")),
        (true, false) => {
            let stocks = get(Section::Stocks).ok_or(ModelFileError::MissingSection("stocks"))?;
            let flows = get(Section::Flows).ok_or(ModelFileError::MissingSection("flows"))?;
            ModelDefinition::StockFlow(parse_stock_flow(name, stocks, flows, parameters, spatial)?)
        }
        (false, true) => {
            let agents = get(Section::Agents).ok_or(ModelFileError::MissingSection("agents"))?;
            let behaviors =
                get(Section::Behaviors).ok_or(ModelFileError::MissingSection("behaviors"))?;
            ModelDefinition::Agent(parse_agent(name, agents, behaviors, parameters, spatial)?)
        }
    };

    let diags = validate_model(&model);
    if diags.is_empty() {
        Ok(model)
    } else {
        Err(ModelFileError::Invalid(diags))
    }
}

fn parse_stock_flow(
    name: String,
    stock_lines: &[Line<'_>],
    flow_lines: &[Line<'_>],
    parameters: ParameterSet,
    spatial: Option<SpatialConfig>,
) -> Result<StockFlowModel, ModelFileError> {
    let mut stocks: Vec<Stock> = Vec::new();
    for line in stock_lines {
        let (stock, rest) = split_assignment(line)?;
        if stocks.iter().any(|s| s.name == stock) || parameters.contains(stock) {
            return Err(ModelFileError::DuplicateName {
                line: line.number,
                name: stock.to_string(),
            });
        }
        let (value, unit) = split_unit(rest);
        stocks.push(Stock {
            name: stock.to_string(),
            initial: parse_real(line.number, value)?,
            unit,
        });
    }

    let mut flows: Vec<Flow> = Vec::new();
    for line in flow_lines {
        let (flow_name, rest) = line
            .text
            .split_once(':')
            .ok_or_else(|| syntax(line.number, "expected `name: source -> sink, rate = expr`"))?;
        let flow_name = flow_name.trim();
        if !is_identifier(flow_name) {
            return Err(syntax(line.number, format!("invalid flow name `{flow_name}`")));
        }
        if flows.iter().any(|f| f.name == flow_name) {
            return Err(ModelFileError::DuplicateName {
                line: line.number,
                name: flow_name.to_string(),
            });
        }
        let (route, rate) = rest
            .split_once(',')
            .ok_or_else(|| syntax(line.number, "expected `, rate = expr` after the route"))?;
        let (src, dst) = route
            .split_once("->")
            .ok_or_else(|| syntax(line.number, "expected `source -> sink`"))?;
        let rate = rate
            .trim()
            .strip_prefix("rate")
            .and_then(|r| r.trim_start().strip_prefix('='))
            .ok_or_else(|| syntax(line.number, "expected `rate = expr`"))?;
        let mut ends = Vec::with_capacity(2);
        for end in [src.trim(), dst.trim()] {
            if end != BOUNDARY && !stocks.iter().any(|s| s.name == end) {
                return Err(ModelFileError::UnknownStock {
                    line: line.number,
                    name: end.to_string(),
                });
            }
            ends.push(Endpoint::parse(end));
        }
        let sink = ends.pop().unwrap();
        let source = ends.pop().unwrap();
        flows.push(Flow {
            name: flow_name.to_string(),
            source,
            sink,
            rate: parse_expr_at(line.number, rate.trim())?,
        });
    }

    Ok(StockFlowModel {
        name,
        stocks,
        flows,
        parameters,
        spatial,
    })
}

fn parse_agent(
    name: String,
    agent_lines: &[Line<'_>],
    behavior_lines: &[Line<'_>],
    parameters: ParameterSet,
    spatial: Option<SpatialConfig>,
) -> Result<AgentModel, ModelFileError> {
    let mut classes: Vec<AgentClass> = Vec::new();
    for line in agent_lines {
        let (class, rest) = split_assignment(line)?;
        if classes.iter().any(|c| c.name == class) || parameters.contains(class) {
            return Err(ModelFileError::DuplicateName {
                line: line.number,
                name: class.to_string(),
            });
        }
        let (value, unit) = split_unit(rest);
        let initial = value
            .parse::<u64>()
            .map_err(|_| syntax(line.number, format!("expected a whole count, found `{value}`")))?;
        classes.push(AgentClass {
            name: class.to_string(),
            initial,
            unit,
        });
    }

    let mut behaviors: Vec<Behavior> = Vec::new();
    for line in behavior_lines {
        let behavior = parse_behavior(line, &classes)?;
        if behaviors.iter().any(|b| b.name == behavior.name) {
            return Err(ModelFileError::DuplicateName {
                line: line.number,
                name: behavior.name,
            });
        }
        behaviors.push(behavior);
    }
    Ok(AgentModel {
        name,
        classes,
        behaviors,
        parameters,
        spatial,
    })
}

fn parse_behavior(line: &Line<'_>, classes: &[AgentClass]) -> Result<Behavior, ModelFileError> {
    let n = line.number;
    let (name, rest) = line
        .text
        .split_once(':')
        .ok_or_else(|| syntax(n, "expected `name: action, rate = expr, tag`"))?;
    let name = name.trim();
    if !is_identifier(name) {
        return Err(syntax(n, format!("invalid behavior name `{name}`")));
    }
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    if parts.len() < 3 {
        return Err(syntax(n, "expected `action, rate = expr, reactive|proactive`"));
    }
    let rate = parts[1]
        .strip_prefix("rate")
        .and_then(|r| r.trim_start().strip_prefix('='))
        .ok_or_else(|| syntax(n, "expected `rate = expr`"))?;
    let rate = parse_expr_at(n, rate.trim())?;
    let tag = match parts[2] {
        "reactive" => BehaviorTag::Reactive,
        "proactive" => BehaviorTag::Proactive,
        other => return Err(syntax(n, format!("expected reactive or proactive, found `{other}`"))),
    };
    let signed = match &parts[3..] {
        [] => false,
        ["signed"] => true,
        _ => return Err(syntax(n, "unexpected trailing fields")),
    };

    let class_ref = |s: &str| -> Result<String, ModelFileError> {
        let s = s.trim();
        if classes.iter().any(|c| c.name == s) {
            Ok(s.to_string())
        } else {
            Err(ModelFileError::UnknownClass {
                line: n,
                name: s.to_string(),
            })
        }
    };

    let words: Vec<&str> = parts[0].split_whitespace().collect();
    let kind = match words.as_slice() {
        ["die", class] => BehaviorKind::PerAgentHazard {
            class: class_ref(class)?,
            rate,
            effect: Effect::Die,
        },
        ["reproduce", class, "->", target, count] => {
            let count = count
                .strip_prefix('x')
                .and_then(|c| c.parse::<u32>().ok())
                .ok_or_else(|| syntax(n, format!("expected offspring count like `x1`, found `{count}`")))?;
            BehaviorKind::PerAgentHazard {
                class: class_ref(class)?,
                rate,
                effect: Effect::Reproduce {
                    count,
                    class: class_ref(target)?,
                },
            }
        }
        ["inflow", class] => BehaviorKind::PopulationInflow {
            class: class_ref(class)?,
            rate,
            signed,
        },
        ["transform", from, "->", to] => BehaviorKind::Transform {
            from: class_ref(from)?,
            to: class_ref(to)?,
            rate,
        },
        _ => {
            return Err(syntax(
                n,
                format!("unrecognised action `{}`", parts[0]),
            ))
        }
    };
    if signed && !matches!(kind, BehaviorKind::PopulationInflow { .. }) {
        return Err(syntax(n, "only inflows can be signed"));
    }
    Ok(Behavior {
        name: name.to_string(),
        kind,
        tag,
    })
}

fn parse_spatial(lines: &[Line<'_>]) -> Result<SpatialConfig, ModelFileError> {
    let mut cfg = SpatialConfig::default();
    for line in lines {
        let (key, value) = split_assignment(line)?;
        let n = line.number;
        let int = |v: &str| {
            v.parse::<u32>()
                .map_err(|_| syntax(n, format!("expected a non-negative integer, found `{v}`")))
        };
        match key {
            "width" => cfg.width = int(value)?,
            "height" => cfg.height = int(value)?,
            "speed" => cfg.speed = int(value)?,
            "kill_radius" => {
                cfg.kill_radius = if value == "inf" { u32::MAX } else { int(value)? }
            }
            "placement" => {
                cfg.placement = match value {
                    "random" => Placement::Random,
                    "explicit" => Placement::Explicit,
                    _ => return Err(syntax(n, format!("unknown placement `{value}`"))),
                }
            }
            "newborn" => {
                cfg.newborn = match value {
                    "random" => NewbornPlacement::Random,
                    "adjacent" => NewbornPlacement::Adjacent,
                    _ => return Err(syntax(n, format!("unknown newborn placement `{value}`"))),
                }
            }
            "hunter" => cfg.hunter = value.to_string(),
            "prey" => cfg.prey = value.to_string(),
            "contact" => cfg.contact_behavior = value.to_string(),
            "position" => {
                let fields: Vec<&str> = value.split_whitespace().collect();
                match fields.as_slice() {
                    [class, x, y] => cfg
                        .positions
                        .entry(class.to_string())
                        .or_default()
                        .push((int(x)?, int(y)?)),
                    _ => return Err(syntax(n, "expected `position = CLASS X Y`")),
                }
            }
            _ => return Err(syntax(n, format!("unknown [spatial] key `{key}`"))),
        }
    }
    Ok(cfg)
}

/// Behaviour-name → population-rate expressions plus any parameters they need.
pub fn parse_closures_file(
    text: &str,
) -> Result<(BTreeMap<String, Expr>, ParameterSet), ModelFileError> {
    let secs = sections(text)?;
    let mut closures = BTreeMap::new();
    let mut params = ParameterSet::new();
    let mut found = false;
    for (section, lines) in &secs {
        match section {
            Section::Closures => {
                found = true;
                for line in lines {
                    let (name, expr) = split_assignment(line)?;
                    if closures
                        .insert(name.to_string(), parse_expr_at(line.number, expr)?)
                        .is_some()
                    {
                        return Err(ModelFileError::DuplicateName {
                            line: line.number,
                            name: name.to_string(),
                        });
                    }
                }
            }
            Section::Parameters => params = parse_parameters(lines)?,
            Section::Model => {}
            _ => {
                let line = lines.first().map_or(0, |l| l.number);
                return Err(syntax(line, "closure files hold only [closures] and [parameters]"));
            }
        }
    }
    if !found {
        return Err(ModelFileError::MissingSection("closures"));
    }
    Ok((closures, params))
}

fn unit_suffix(unit: Option<&str>) -> String {
    unit.map(|u| format!(" [{u}]")).unwrap_or_default()
}

fn write_parameters(out: &mut String, params: &ParameterSet) {
    if params.is_empty() {
        return;
    }
    out.push_str("\n[parameters]\n");
    for (name, p) in params.iter() {
        let _ = writeln!(out, "{name} = {}{}", p.value, unit_suffix(p.unit.as_deref()));
    }
}

fn write_spatial(out: &mut String, cfg: &SpatialConfig) {
    out.push_str("\n[spatial]\n");
    let _ = writeln!(out, "width = {}", cfg.width);
    let _ = writeln!(out, "height = {}", cfg.height);
    let _ = writeln!(out, "speed = {}", cfg.speed);
    if cfg.kill_radius == u32::MAX {
        out.push_str("kill_radius = inf\n");
    } else {
        let _ = writeln!(out, "kill_radius = {}", cfg.kill_radius);
    }
    let placement = match cfg.placement {
        Placement::Random => "random",
        Placement::Explicit => "explicit",
    };
    let newborn = match cfg.newborn {
        NewbornPlacement::Random => "random",
        NewbornPlacement::Adjacent => "adjacent",
    };
    let _ = writeln!(out, "placement = {placement}");
    let _ = writeln!(out, "newborn = {newborn}");
    let _ = writeln!(out, "hunter = {}", cfg.hunter);
    let _ = writeln!(out, "prey = {}", cfg.prey);
    let _ = writeln!(out, "contact = {}", cfg.contact_behavior);
    for (class, positions) in &cfg.positions {
        for (x, y) in positions {
            let _ = writeln!(out, "position = {class} {x} {y}");
        }
    }
}

/// Serialises a model in the file format read by [`parse_model_file`].
pub fn write_model_file(model: &ModelDefinition) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[model]\nname = {}", model.name());
    match model {
        ModelDefinition::StockFlow(m) => {
            write_parameters(&mut out, &m.parameters);
            out.push_str("\n[stocks]\n");
            for s in &m.stocks {
                let _ = writeln!(out, "{} = {}{}", s.name, s.initial, unit_suffix(s.unit.as_deref()));
            }
            out.push_str("\n[flows]\n");
            for f in &m.flows {
                let _ = writeln!(out, "{}: {} -> {}, rate = {}", f.name, f.source, f.sink, f.rate);
            }
            if let Some(cfg) = &m.spatial {
                write_spatial(&mut out, cfg);
            }
        }
        ModelDefinition::Agent(m) => {
            write_parameters(&mut out, &m.parameters);
            out.push_str("\n[agents]\n");
            for c in &m.classes {
                let _ = writeln!(out, "{} = {}{}", c.name, c.initial, unit_suffix(c.unit.as_deref()));
            }
            out.push_str("\n[behaviors]\n");
            for b in &m.behaviors {
                let (action, signed) = match &b.kind {
                    BehaviorKind::PerAgentHazard {
                        class,
                        effect: Effect::Die,
                        ..
                    } => (format!("die {class}"), false),
                    BehaviorKind::PerAgentHazard {
                        class,
                        effect: Effect::Reproduce { count, class: target },
                        ..
                    } => (format!("reproduce {class} -> {target} x{count}"), false),
                    BehaviorKind::PopulationInflow { class, signed, .. } => {
                        (format!("inflow {class}"), *signed)
                    }
                    BehaviorKind::Transform { from, to, .. } => {
                        (format!("transform {from} -> {to}"), false)
                    }
                };
                let _ = write!(out, "{}: {action}, rate = {}, {}", b.name, b.rate(), b.tag);
                if signed {
                    out.push_str(", signed");
                }
                out.push('\n');
            }
            if let Some(cfg) = &m.spatial {
                write_spatial(&mut out, cfg);
            }
        }
    }
    out
}

/// Serialises a closure set in the format read by [`parse_closures_file`].
pub fn write_closures_file(closures: &BTreeMap<String, Expr>, params: &ParameterSet) -> String {
    let mut out = String::new();
    write_parameters(&mut out, params);
    out.push_str("\n[closures]\n");
    for (name, expr) in closures {
        let _ = writeln!(out, "{name} = {expr}");
    }
    out
}
