//! Experiment runner: executes the engines an experiment asks for, compares
//! them against the deterministic run and writes every result to disk.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! report.txt, report.json
//! conversion.txt              when the agent form was generated
//! sds/trajectory.csv
//! abs/ensemble.csv, abs/rep_<i>.csv
//! spatial/ensemble.csv, spatial/rep_<i>.csv, spatial/kills.csv
//! sweep/abs_dt_<dt>.csv       ensemble statistics per swept ABS step
//! plot/<engine>_<series>.dat  two-column plot data
//! ```

pub mod compare;
pub mod output;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abs::{run_ensemble, Ensemble, DEFAULT_ABS_DT};
use crate::bundled;
use crate::conversion::{abs_to_sds, sds_to_abs, ConversionError, ConversionReport, RateClosureSet};
use crate::error::SimError;
use crate::model::{AgentModel, ModelDefinition, StockFlowModel};
use crate::modelfile::{parse_model_file, ModelFileError};
use crate::sds::{
    detect_steady_state, integrate, Method, SimConfig, Trajectory, DEFAULT_SDS_DT, DEFAULT_STEADY_REL_TOL,
    DEFAULT_STEADY_WINDOW,
};
use crate::spatial::run_spatial_ensemble;

pub use compare::{compare_trajectories, SeriesComparison};
pub use output::{format_float, write_csv, CsvSource};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("model `{reference}`: {source}")]
    Model {
        reference: String,
        #[source]
        source: ModelFileError,
    },
    #[error("{engine} engine: {source}")]
    Engine {
        engine: Engine,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Conversion(#[from] ConversionError),
    #[error("comparison: {0}")]
    Compare(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Sds,
    Abs,
    Spatial,
    /// Shorthand for `sds` plus `abs`.
    Paired,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Sds => "sds",
            Engine::Abs => "abs",
            Engine::Spatial => "spatial",
            Engine::Paired => "paired",
        })
    }
}

fn default_sds_dt() -> f64 {
    DEFAULT_SDS_DT
}

fn default_abs_dt() -> f64 {
    DEFAULT_ABS_DT
}

fn default_window() -> f64 {
    DEFAULT_STEADY_WINDOW
}

fn default_rel_tol() -> f64 {
    DEFAULT_STEADY_REL_TOL
}

/// Everything needed to reproduce one experiment.
///
/// Model references are file paths (relative ones resolve against
/// `base_dir`) or `bundled:<file>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: String,
    /// Agent form to use instead of converting `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_model: Option<String>,
    /// Rate closures for building the stock-flow form from an agent model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closures: Option<String>,
    pub engines: Vec<Engine>,
    pub horizon: f64,
    pub n_reps: usize,
    pub base_seed: u64,
    #[serde(default = "default_sds_dt")]
    pub sds_dt: f64,
    #[serde(default)]
    pub method: Method,
    /// Step of the agent engines.
    #[serde(default = "default_abs_dt")]
    pub abs_dt: f64,
    /// Extra ABS steps to compare against the deterministic run.
    #[serde(default)]
    pub dt_sweep: Vec<f64>,
    #[serde(default = "default_window")]
    pub steady_window: f64,
    #[serde(default = "default_rel_tol")]
    pub steady_rel_tol: f64,
    /// Initial-value overrides by stock / class name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub initial: BTreeMap<String, f64>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

const PRESETS: &[(&str, &str)] = &[
    ("exp-kp-400d", include_str!("../../presets/exp-kp-400d.toml")),
    ("exp-kuz-100d", include_str!("../../presets/exp-kuz-100d.toml")),
    ("exp-spatial", include_str!("../../presets/exp-spatial.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("preset {n}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Selected engines with `paired` expanded, sorted and deduplicated.
    pub fn engines(&self) -> Vec<Engine> {
        let mut out: Vec<Engine> = self
            .engines
            .iter()
            .flat_map(|e| match e {
                Engine::Paired => vec![Engine::Sds, Engine::Abs],
                e => vec![*e],
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    fn uses(&self, engine: Engine) -> bool {
        self.engines().contains(&engine)
    }

    pub fn sds_config(&self) -> SimConfig {
        SimConfig::new(self.sds_dt, self.horizon).with_method(self.method)
    }

    pub fn abs_config(&self) -> SimConfig {
        SimConfig::new(self.abs_dt, self.horizon)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.engines().is_empty() {
            return bad("no engine selected".into());
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if !(self.steady_window > 0.0 && self.steady_rel_tol > 0.0) {
            return bad("steady-state window and tolerance must be positive".into());
        }
        for dt in std::iter::once(&self.abs_dt).chain(&self.dt_sweep) {
            if let Err(e) = SimConfig::new(*dt, self.horizon).steps() {
                return bad(e.to_string());
            }
        }
        if let Err(e) = self.sds_config().steps() {
            return bad(e.to_string());
        }
        Ok(())
    }

    /// SHA-256 of the serialised config followed by the text of every model
    /// and closure file it references.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        for reference in self.references() {
            h.update(b"\n--\n");
            h.update(read_reference(reference, self.base_dir.as_deref())?.as_bytes());
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    fn references(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.model.as_str())
            .chain(self.agent_model.as_deref())
            .chain(self.closures.as_deref())
    }
}

fn read_reference(reference: &str, base: Option<&Path>) -> Result<String, HarnessError> {
    if let Some(file) = reference.strip_prefix(bundled::PREFIX) {
        return bundled::source(file)
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Config(format!("no bundled file `{file}`")));
    }
    let path = match base {
        Some(dir) if Path::new(reference).is_relative() => dir.join(reference),
        _ => PathBuf::from(reference),
    };
    fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
}

/// Reads and parses a model file or `bundled:` reference.
pub fn load_model(reference: &str, base: Option<&Path>) -> Result<ModelDefinition, HarnessError> {
    let text = read_reference(reference, base)?;
    parse_model_file(&text).map_err(|source| HarnessError::Model {
        reference: reference.to_string(),
        source,
    })
}

pub fn load_closures(reference: &str, base: Option<&Path>) -> Result<RateClosureSet, HarnessError> {
    let text = read_reference(reference, base)?;
    RateClosureSet::parse(&text).map_err(|source| HarnessError::Model {
        reference: reference.to_string(),
        source,
    })
}

/// Both forms of the experiment's model, as far as the engines need them.
#[derive(Debug, Clone)]
pub struct ResolvedModels {
    pub stock_flow: Option<StockFlowModel>,
    pub agent: Option<AgentModel>,
    pub conversion: Option<ConversionReport>,
}

pub fn resolve_models(config: &ExperimentConfig) -> Result<ResolvedModels, HarnessError> {
    let base = config.base_dir.as_deref();
    let (mut stock_flow, mut agent) = match load_model(&config.model, base)? {
        ModelDefinition::StockFlow(m) => (Some(m), None),
        ModelDefinition::Agent(m) => (None, Some(m)),
    };
    if let Some(reference) = &config.agent_model {
        match load_model(reference, base)? {
            ModelDefinition::Agent(m) => agent = Some(m),
            ModelDefinition::StockFlow(_) => {
                return Err(HarnessError::Config(format!("`{reference}` is not an agent model")))
            }
        }
    }
    let mut conversion = None;
    let needs_agent = config.uses(Engine::Abs) || config.uses(Engine::Spatial);
    if needs_agent && agent.is_none() {
        let conv = sds_to_abs(stock_flow.as_ref().expect("one form is present"))?;
        agent = Some(conv.model);
        conversion = Some(conv.report);
    }
    if config.uses(Engine::Sds) && stock_flow.is_none() {
        let Some(reference) = &config.closures else {
            return Err(HarnessError::Config(
                "the sds engine needs a stock-flow model or rate closures for the agent model".into(),
            ));
        };
        let closures = load_closures(reference, base)?;
        stock_flow = Some(abs_to_sds(agent.as_ref().expect("one form is present"), &closures)?);
    }

    for (name, &value) in &config.initial {
        if !(value.is_finite() && value >= 0.0) {
            return Err(HarnessError::Config(format!(
                "initial value for `{name}` must be a non-negative number"
            )));
        }
        let mut found = false;
        if let Some(m) = stock_flow.as_mut() {
            if let Some(s) = m.stocks.iter_mut().find(|s| &s.name == name) {
                s.initial = value;
                found = true;
            }
        }
        if let Some(m) = agent.as_mut() {
            if let Some(c) = m.classes.iter_mut().find(|c| &c.name == name) {
                c.initial = value.round() as u64;
                found = true;
            }
        }
        if !found {
            return Err(HarnessError::Config(format!("no stock or class named `{name}`")));
        }
    }
    Ok(ResolvedModels {
        stock_flow,
        agent,
        conversion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdsSummary {
    pub dt: f64,
    pub method: Method,
    pub steady_state: Option<f64>,
    pub minimum: BTreeMap<String, f64>,
    pub final_value: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KillSummary {
    pub steps: u64,
    pub total_kills: u64,
    pub max_kills_per_step: u64,
    /// Steps whose kills exceeded min(hunters, prey); always 0 unless broken.
    pub cap_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub engine: Engine,
    pub dt: f64,
    pub n_reps: usize,
    /// Steady-state time of the ensemble mean.
    pub steady_state: Option<f64>,
    pub extinction: BTreeMap<String, f64>,
    /// Against the deterministic run; empty when it was not run.
    pub comparison: Vec<SeriesComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kills: Option<KillSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub dt: f64,
    pub rmse: BTreeMap<String, f64>,
    pub extinction: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    pub engines: Vec<Engine>,
    pub horizon: f64,
    pub n_reps: usize,
    pub base_seed: u64,
    pub sds: Option<SdsSummary>,
    pub abs: Option<EnsembleSummary>,
    pub spatial: Option<EnsembleSummary>,
    pub dt_sweep: Vec<SweepPoint>,
    pub conversion_flags: Vec<String>,
}

/// In-memory results of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub sds: Option<Trajectory>,
    pub abs: Option<Ensemble>,
    pub spatial: Option<Ensemble>,
    pub sweep: Vec<(f64, Ensemble)>,
    pub conversion: Option<ConversionReport>,
}

fn extinction_map(e: &Ensemble) -> BTreeMap<String, f64> {
    e.class_names.iter().cloned().zip(e.extinction.iter().copied()).collect()
}

fn kill_summary(e: &Ensemble) -> KillSummary {
    let mut s = KillSummary {
        steps: 0,
        total_kills: 0,
        max_kills_per_step: 0,
        cap_violations: 0,
    };
    for k in e.replications.iter().flat_map(|r| &r.kills) {
        s.steps += 1;
        s.total_kills += k.kills();
        s.max_kills_per_step = s.max_kills_per_step.max(k.kills());
        s.cap_violations += u64::from(k.kills() > k.hunters.min(k.prey));
    }
    s
}

fn summarize(
    engine: Engine,
    dt: f64,
    ensemble: &Ensemble,
    sds: Option<&Trajectory>,
    config: &ExperimentConfig,
) -> Result<EnsembleSummary, HarnessError> {
    let mean = ensemble.mean_trajectory();
    let comparison = match sds {
        Some(t) => compare_trajectories(t, &mean)?,
        None => Vec::new(),
    };
    Ok(EnsembleSummary {
        engine,
        dt,
        n_reps: ensemble.len(),
        steady_state: detect_steady_state(&mean, config.steady_window, config.steady_rel_tol),
        extinction: extinction_map(ensemble),
        comparison,
        kills: (engine == Engine::Spatial).then(|| kill_summary(ensemble)),
    })
}

/// Runs every selected engine without touching the filesystem.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    config.validate()?;
    let models = resolve_models(config)?;
    let engine_err = |engine| move |source| HarnessError::Engine { engine, source };

    let sds = match (&models.stock_flow, config.uses(Engine::Sds)) {
        (Some(m), true) => Some(integrate(m, &config.sds_config()).map_err(engine_err(Engine::Sds))?),
        _ => None,
    };
    let sds_summary = sds.as_ref().map(|t| SdsSummary {
        dt: config.sds_dt,
        method: config.method,
        steady_state: detect_steady_state(t, config.steady_window, config.steady_rel_tol),
        minimum: t
            .names
            .iter()
            .cloned()
            .zip(t.series.iter().map(|s| s.iter().copied().fold(f64::INFINITY, f64::min)))
            .collect(),
        final_value: t
            .names
            .iter()
            .cloned()
            .zip(t.series.iter().map(|s| s.last().copied().unwrap_or(f64::NAN)))
            .collect(),
    });

    let agent = models.agent.as_ref();
    let abs = match (agent, config.uses(Engine::Abs)) {
        (Some(m), true) => Some(
            run_ensemble(m, &config.abs_config(), config.n_reps, config.base_seed)
                .map_err(engine_err(Engine::Abs))?,
        ),
        _ => None,
    };
    let spatial = match (agent, config.uses(Engine::Spatial)) {
        (Some(m), true) => Some(
            run_spatial_ensemble(m, &config.abs_config(), config.n_reps, config.base_seed)
                .map_err(engine_err(Engine::Spatial))?,
        ),
        _ => None,
    };

    let mut sweep = Vec::new();
    let mut sweep_points = Vec::new();
    if let (Some(m), Some(main)) = (agent, &abs) {
        for &dt in &config.dt_sweep {
            let ensemble = if dt == config.abs_dt {
                main.clone()
            } else {
                run_ensemble(m, &SimConfig::new(dt, config.horizon), config.n_reps, config.base_seed)
                    .map_err(engine_err(Engine::Abs))?
            };
            let rmse = match &sds {
                Some(t) => compare_trajectories(t, &ensemble.mean_trajectory())?
                    .into_iter()
                    .map(|c| (c.name, c.rmse))
                    .collect(),
                None => BTreeMap::new(),
            };
            sweep_points.push(SweepPoint {
                dt,
                rmse,
                extinction: extinction_map(&ensemble),
            });
            sweep.push((dt, ensemble));
        }
    }

    let report = ExperimentReport {
        name: config.name.clone(),
        config_hash: config.hash()?,
        engines: config.engines(),
        horizon: config.horizon,
        n_reps: config.n_reps,
        base_seed: config.base_seed,
        abs: abs
            .as_ref()
            .map(|e| summarize(Engine::Abs, config.abs_dt, e, sds.as_ref(), config))
            .transpose()?,
        spatial: spatial
            .as_ref()
            .map(|e| summarize(Engine::Spatial, config.abs_dt, e, sds.as_ref(), config))
            .transpose()?,
        sds: sds_summary,
        dt_sweep: sweep_points,
        conversion_flags: models.conversion.as_ref().map(|c| c.flags.clone()).unwrap_or_default(),
    };
    Ok(ExperimentRun {
        report,
        sds,
        abs,
        spatial,
        sweep,
        conversion: models.conversion,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_else(|| "-".into())
}

/// Plain-text rendering of a report.
pub fn render_report(r: &ExperimentReport) -> String {
    let mut s = String::new();
    let engines: Vec<String> = r.engines.iter().map(Engine::to_string).collect();
    let _ = writeln!(s, "experiment {}", r.name);
    let _ = writeln!(s, "config hash {}", r.config_hash);
    let _ = writeln!(s, "engines {}", engines.join(", "));
    let _ = writeln!(
        s,
        "horizon {} days, {} replication(s), base seed {}",
        format_float(r.horizon),
        r.n_reps,
        r.base_seed
    );
    s.push_str("\n[sds]\n");
    match &r.sds {
        None => s.push_str("not run\n"),
        Some(sds) => {
            let _ = writeln!(s, "dt {} ({:?})", format_float(sds.dt), sds.method);
            let _ = writeln!(s, "steady state at {}", opt(sds.steady_state));
            for (name, min) in &sds.minimum {
                let _ = writeln!(
                    s,
                    "{name}: minimum {}, final {}",
                    format_float(*min),
                    format_float(sds.final_value[name])
                );
            }
        }
    }
    for (label, summary) in [("abs", &r.abs), ("spatial", &r.spatial)] {
        let _ = writeln!(s, "\n[{label}]");
        let Some(e) = summary else {
            s.push_str("not run\n");
            continue;
        };
        let _ = writeln!(s, "dt {}, {} replication(s)", format_float(e.dt), e.n_reps);
        let _ = writeln!(s, "mean steady state at {}", opt(e.steady_state));
        for (class, p) in &e.extinction {
            let _ = writeln!(s, "{class}: extinction probability {}", format_float(*p));
        }
        for c in &e.comparison {
            let _ = writeln!(
                s,
                "{}: rmse {}, max |diff| {} at t = {}, mean ratio {}",
                c.name,
                format_float(c.rmse),
                format_float(c.max_abs_diff),
                format_float(c.max_diff_time),
                opt(c.mean_ratio)
            );
        }
        if let Some(k) = &e.kills {
            let _ = writeln!(
                s,
                "kills: {} over {} steps, at most {} per step, {} cap violation(s)",
                k.total_kills, k.steps, k.max_kills_per_step, k.cap_violations
            );
        }
    }
    if !r.dt_sweep.is_empty() {
        s.push_str("\n[dt sweep]\n");
        for p in &r.dt_sweep {
            let rmse: Vec<String> = p
                .rmse
                .iter()
                .map(|(n, v)| format!("{n} rmse {}", format_float(*v)))
                .collect();
            let ext: Vec<String> = p
                .extinction
                .iter()
                .map(|(n, v)| format!("{n} extinction {}", format_float(*v)))
                .collect();
            let _ = writeln!(s, "dt {}: {}; {}", format_float(p.dt), rmse.join(", "), ext.join(", "));
        }
    }
    if !r.conversion_flags.is_empty() {
        s.push_str("\n[conversion flags]\n");
        for f in &r.conversion_flags {
            let _ = writeln!(s, "{f}");
        }
    }
    s
}

fn ensemble_files(dir: &str, label: &str, e: &Ensemble, files: &mut Vec<(PathBuf, Vec<u8>)>) {
    files.push((
        Path::new(dir).join("ensemble.csv"),
        output::to_csv_bytes(CsvSource::Ensemble(e)),
    ));
    for (i, rep) in e.replications.iter().enumerate() {
        files.push((
            Path::new(dir).join(format!("rep_{i}.csv")),
            output::to_csv_bytes(CsvSource::Replication(rep)),
        ));
    }
    for (c, name) in e.class_names.iter().enumerate() {
        files.push((
            Path::new("plot").join(format!("{label}_{name}.dat")),
            output::plot_data(&e.times, &e.mean[c]),
        ));
    }
}

/// Relative path and content of every output file, in write order.
pub fn artifacts(run: &ExperimentRun) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    if let Some(t) = &run.sds {
        files.push((PathBuf::from("sds/trajectory.csv"), output::to_csv_bytes(CsvSource::Trajectory(t))));
        for (name, series) in t.names.iter().zip(&t.series) {
            files.push((
                Path::new("plot").join(format!("sds_{name}.dat")),
                output::plot_data(&t.times, series),
            ));
        }
    }
    if let Some(e) = &run.abs {
        ensemble_files("abs", "abs", e, &mut files);
    }
    if let Some(e) = &run.spatial {
        ensemble_files("spatial", "spatial", e, &mut files);
        let mut kills = Vec::new();
        output::write_kills_csv(&e.replications, &mut kills).expect("in-memory write");
        files.push((PathBuf::from("spatial/kills.csv"), kills));
    }
    for (dt, e) in &run.sweep {
        files.push((
            Path::new("sweep").join(format!("abs_dt_{}.csv", format_float(*dt))),
            output::to_csv_bytes(CsvSource::Ensemble(e)),
        ));
    }
    if let Some(c) = &run.conversion {
        files.push((PathBuf::from("conversion.txt"), c.to_string().into_bytes()));
    }
    let mut json = serde_json::to_string_pretty(&run.report).expect("report serialises");
    json.push('\n');
    files.push((PathBuf::from("report.json"), json.into_bytes()));
    files.push((PathBuf::from("report.txt"), render_report(&run.report).into_bytes()));
    files
}

/// Writes `files` under `out`; on failure everything written so far is
/// removed again.
pub fn write_artifacts(out: &Path, files: &[(PathBuf, Vec<u8>)]) -> Result<(), HarnessError> {
    let existed = out.exists();
    let mut written: Vec<PathBuf> = Vec::new();
    let mut created_dirs: Vec<PathBuf> = Vec::new();
    let result = (|| {
        for (rel, bytes) in files {
            let path = out.join(rel);
            if let Some(parent) = path.parent() {
                let mut missing = Vec::new();
                let mut p = parent;
                while !p.exists() {
                    missing.push(p.to_path_buf());
                    match p.parent() {
                        Some(q) => p = q,
                        None => break,
                    }
                }
                fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
                created_dirs.extend(missing.into_iter().rev());
            }
            fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
        }
        Ok(())
    })();
    if result.is_err() {
        if existed {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            for d in created_dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        } else {
            let _ = fs::remove_dir_all(out);
        }
    }
    result
}

/// Runs the experiment and writes its output tree under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentReport, HarnessError> {
    let run = execute(config)?;
    write_artifacts(out, &artifacts(&run))?;
    Ok(run.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.validate().unwrap();
            assert_eq!(cfg.n_reps, 50);
        }
        let kuz = preset("exp-kuz-100d").unwrap();
        assert_eq!(kuz.horizon, 100.0);
        assert_eq!(kuz.dt_sweep, [0.5, 0.1, 0.02]);
        assert_eq!(preset("exp-kp-400d").unwrap().horizon, 400.0);
        assert!(preset("nope").is_none());
    }

    #[test]
    fn paired_expands() {
        let mut cfg = preset("exp-kuz-100d").unwrap();
        cfg.engines = vec![Engine::Paired, Engine::Sds];
        assert_eq!(cfg.engines(), [Engine::Sds, Engine::Abs]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = preset("exp-spatial").unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "name = \"x\"\nmodel = \"bundled:kuz2.sds\"\nengines = [\"sds\"]\nhorizon = 1.0\nn_reps = 1\nbase_seed = 0\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))));
    }

    #[test]
    fn sds_only_leaves_agent_fields_empty() {
        let mut cfg = preset("exp-kuz-100d").unwrap();
        cfg.engines = vec![Engine::Sds];
        cfg.n_reps = 1;
        cfg.horizon = 20.0;
        let run = execute(&cfg).unwrap();
        assert!(run.report.abs.is_none() && run.report.spatial.is_none());
        assert!(run.report.dt_sweep.is_empty());
        assert!(render_report(&run.report).contains("[abs]\nnot run\n"));
    }

    #[test]
    fn initial_overrides_apply_to_both_forms() {
        let mut cfg = preset("exp-kuz-100d").unwrap();
        cfg.initial.insert("E".into(), 7.4);
        let m = resolve_models(&cfg).unwrap();
        assert_eq!(m.stock_flow.unwrap().stock("E").unwrap().initial, 7.4);
        assert_eq!(m.agent.unwrap().class("E").unwrap().initial, 7);
        cfg.initial.insert("Q".into(), 1.0);
        assert!(resolve_models(&cfg).is_err());
    }

    #[test]
    fn agent_only_config_needs_closures_for_sds() {
        let mut cfg = preset("exp-kuz-100d").unwrap();
        cfg.model = "bundled:kuz2.abs".into();
        assert!(matches!(resolve_models(&cfg), Err(HarnessError::Config(_))));
        cfg.closures = Some("bundled:kuz2.closures".into());
        let m = resolve_models(&cfg).unwrap();
        assert!(m.stock_flow.is_some() && m.conversion.is_none());
    }
}
