use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dualsim::conversion::{abs_to_sds, sds_to_abs, RateClosureSet};
use dualsim::harness::{self, Engine, ExperimentConfig, HarnessError};
use dualsim::model::ModelDefinition;
use dualsim::modelfile::write_model_file;
use dualsim::sds::Method;

const DEFAULT_SEED: u64 = 1729;

#[derive(Parser)]
#[command(name = "dualsim", version, about = "Stock-flow and agent-based simulation of population models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Sds,
    Abs,
    Spatial,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Abs,
    Sds,
}

#[derive(Subcommand)]
enum Command {
    /// Run one engine on a model file (or `bundled:<file>`).
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum)]
        engine: EngineArg,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        /// Defaults to $DUALSIM_SEED, then 1729.
        #[arg(long)]
        seed: Option<u64>,
        /// Rate closures, when running `sds` on an agent model.
        #[arg(long)]
        closures: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate a model between stock-flow and agent form.
    Convert {
        #[arg(long, value_enum)]
        to: Form,
        #[arg(long)]
        model: String,
        #[arg(long)]
        closures: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a preset or a TOML experiment config.
    Experiment {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Initial-value override, `NAME=VALUE`; repeatable.
        #[arg(long = "initial", value_parser = parse_assignment)]
        initial: Vec<(String, f64)>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// List the bundled models and presets.
    List,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let value = value.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((name.trim().to_string(), value))
}

fn default_seed() -> Result<u64, HarnessError> {
    match std::env::var("DUALSIM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("DUALSIM_SEED `{v}` is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn print_summary(report: &harness::ExperimentReport) {
    print!("{}", harness::render_report(report));
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    model: String,
    engine: EngineArg,
    dt: Option<f64>,
    horizon: f64,
    reps: usize,
    seed: Option<u64>,
    closures: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let engine = match engine {
        EngineArg::Sds => Engine::Sds,
        EngineArg::Abs => Engine::Abs,
        EngineArg::Spatial => Engine::Spatial,
    };
    let base_seed = match seed {
        Some(s) => s,
        None => default_seed()?,
    };
    let (sds_dt, abs_dt) = match engine {
        Engine::Sds => (dt.unwrap_or(dualsim::sds::DEFAULT_SDS_DT), dualsim::abs::DEFAULT_ABS_DT),
        _ => (dualsim::sds::DEFAULT_SDS_DT, dt.unwrap_or(dualsim::abs::DEFAULT_ABS_DT)),
    };
    let config = ExperimentConfig {
        name: "simulate".into(),
        model,
        agent_model: None,
        closures,
        engines: vec![engine],
        horizon,
        n_reps: reps,
        base_seed,
        sds_dt,
        method: Method::Rk4,
        abs_dt,
        dt_sweep: Vec::new(),
        steady_window: dualsim::sds::DEFAULT_STEADY_WINDOW,
        steady_rel_tol: dualsim::sds::DEFAULT_STEADY_REL_TOL,
        initial: BTreeMap::new(),
        base_dir: None,
    };
    let report = match out {
        Some(dir) => harness::run_experiment(&config, &dir)?,
        None => harness::execute(&config)?.report,
    };
    print_summary(&report);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn convert(to: Form, model: &str, closures: Option<String>, out: &Path) -> Result<(), HarnessError> {
    match (to, harness::load_model(model, None)?) {
        (Form::Abs, ModelDefinition::StockFlow(m)) => {
            let conv = sds_to_abs(&m)?;
            write(out, &write_model_file(&ModelDefinition::Agent(conv.model)))?;
            let mut report_path = out.as_os_str().to_owned();
            report_path.push(".report.txt");
            write(Path::new(&report_path), &conv.report.to_string())?;
            print!("{}", conv.report);
        }
        (Form::Sds, ModelDefinition::Agent(m)) => {
            let closures = match closures {
                Some(c) => harness::load_closures(&c, None)?,
                None => RateClosureSet::default(),
            };
            let sds = abs_to_sds(&m, &closures)?;
            write(out, &write_model_file(&ModelDefinition::StockFlow(sds)))?;
        }
        (Form::Abs, ModelDefinition::Agent(_)) => {
            return Err(HarnessError::Config(format!("`{model}` is already an agent model")))
        }
        (Form::Sds, ModelDefinition::StockFlow(_)) => {
            return Err(HarnessError::Config(format!("`{model}` is already a stock-flow model")))
        }
    }
    Ok(())
}

fn experiment(
    preset: Option<String>,
    config: Option<PathBuf>,
    out: &Path,
    initial: Vec<(String, f64)>,
    seed: Option<u64>,
    reps: Option<usize>,
) -> Result<(), HarnessError> {
    let mut cfg = match (preset, config) {
        (Some(name), _) => harness::preset(&name).ok_or_else(|| {
            let known: Vec<&str> = harness::preset_names().collect();
            HarnessError::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
        })?,
        (None, Some(path)) => ExperimentConfig::load(&path)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    cfg.initial.extend(initial);
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(n) = reps {
        cfg.n_reps = n;
    }
    let report = harness::run_experiment(&cfg, out)?;
    print_summary(&report);
    Ok(())
}

fn list() {
    println!("bundled models (use as bundled:<file>):");
    for name in dualsim::bundled::names() {
        println!("  {name}");
    }
    println!("presets:");
    for name in harness::preset_names() {
        println!("  {name}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            model,
            engine,
            dt,
            horizon,
            reps,
            seed,
            closures,
            out,
        } => simulate(model, engine, dt, horizon, reps, seed, closures, out),
        Command::Convert {
            to,
            model,
            closures,
            out,
        } => convert(to, &model, closures, &out),
        Command::Experiment {
            preset,
            config,
            out,
            initial,
            seed,
            reps,
        } => experiment(preset, config, &out, initial, seed, reps),
        Command::List => {
            list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
