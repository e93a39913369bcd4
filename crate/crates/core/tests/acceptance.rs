//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dualsim::abs::{rng_from_seed, run_ensemble};
use dualsim::bundled;
use dualsim::conversion::{abs_to_sds, residual_closures, sds_to_abs};
use dualsim::harness::{execute, preset, resolve_models, run_experiment};
use dualsim::model::{
    AgentClass, AgentModel, Behavior, BehaviorKind, BehaviorTag, Effect, Endpoint, Flow, ParameterSet, Stock,
    StockFlowModel,
};
use dualsim::parse_expression;
use dualsim::sds::{detect_steady_state, integrate, Method, SimConfig, StockFlowSystem};
use dualsim::spatial::{resolve_kills, SpatialState};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, outcome: Outcome) -> Outcome {
    let took = started.elapsed();
    let note = |d: String| format!("{d}; {:.2}s (limit {}s)", took.as_secs_f64(), limit.as_secs());
    match outcome {
        Ok(d) if took <= limit => Ok(note(d)),
        Ok(d) | Err(d) => Err(note(d)),
    }
}

fn logistic() -> StockFlowModel {
    let mut parameters = ParameterSet::new();
    parameters.insert("a", 1.636, None);
    parameters.insert("b", 0.002, None);
    StockFlowModel {
        name: "logistic".into(),
        stocks: vec![Stock { name: "T".into(), initial: 100.0, unit: None }],
        flows: vec![Flow {
            name: "growth".into(),
            source: Endpoint::Boundary,
            sink: Endpoint::Stock("T".into()),
            rate: parse_expression("a*T*(1-b*T)").unwrap(),
        }],
        parameters,
        spatial: None,
    }
}

fn convergence() -> Outcome {
    // T(t) = K / (1 + (K/T0 - 1) e^{-at}), K = 1/b = 500
    let exact = |t: f64| 500.0 / (1.0 + 4.0 * (-1.636 * t).exp());
    let max_err = |method, dt| {
        let traj = integrate(&logistic(), &SimConfig::new(dt, 10.0).with_method(method)).unwrap();
        traj.times
            .iter()
            .zip(&traj.series[0])
            .map(|(&t, &x)| (x - exact(t)).abs())
            .fold(0.0, f64::max)
    };
    let ratios = |method| {
        let e: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&dt| max_err(method, dt)).collect();
        [e[0] / e[1], e[1] / e[2]]
    };
    let rk4 = ratios(Method::Rk4);
    let euler = ratios(Method::Euler);
    check(
        rk4.iter().all(|&r| r >= 12.0) && euler.iter().all(|&r| r >= 1.8),
        format!(
            "RK4 error ratios {:.2}, {:.2} (>= 12); Euler {:.2}, {:.2} (>= 1.8)",
            rk4[0], rk4[1], euler[0], euler[1]
        ),
    )
}

fn steady_state() -> Outcome {
    let cfg = preset("exp-kuz-100d").unwrap();
    let model = resolve_models(&cfg).unwrap().stock_flow.unwrap();
    let traj = integrate(&model, &cfg.sds_config()).unwrap();
    match detect_steady_state(&traj, cfg.steady_window, cfg.steady_rel_tol) {
        Some(t) => check(t <= 60.0, format!("SDS steady state at t = {t:.2} (<= 60)")),
        None => Err("SDS never reaches a steady state".into()),
    }
}

fn absorption() -> Outcome {
    let cfg = preset("exp-kuz-100d").unwrap();
    let models = resolve_models(&cfg).unwrap();
    let agent = models.agent.unwrap();
    let ens = run_ensemble(&agent, &cfg.abs_config(), cfg.n_reps, cfg.base_seed).unwrap();
    let e = ens.class_index("E").unwrap();
    let mut reached = 0;
    let mut revived = 0;
    for rep in &ens.replications {
        if let Some(first) = rep.series[e].iter().position(|&c| c == 0) {
            reached += 1;
            if rep.series[e][first..].iter().any(|&c| c > 0) {
                revived += 1;
            }
        }
    }
    let traj = integrate(&models.stock_flow.unwrap(), &cfg.sds_config()).unwrap();
    let sds_min = traj.series("E").unwrap().iter().copied().fold(f64::INFINITY, f64::min);
    check(
        revived == 0 && sds_min > 0.0 && ens.len() == 50,
        format!(
            "{reached}/{} runs reach E = 0, {revived} leave it again; SDS minimum of E {sds_min:e} (> 0)",
            ens.len()
        ),
    )
}

fn one_class(behavior: BehaviorKind, n0: u64, rate_name: &str, rate: f64) -> AgentModel {
    let mut parameters = ParameterSet::new();
    parameters.insert(rate_name, rate, None);
    AgentModel {
        name: "test".into(),
        classes: vec![AgentClass { name: "N".into(), initial: n0, unit: None }],
        behaviors: vec![Behavior { name: "b".into(), kind: behavior, tag: BehaviorTag::Reactive }],
        parameters,
        spatial: None,
    }
}

fn mean_field() -> Outcome {
    let cfg = SimConfig::new(0.1, 20.0);
    let death = one_class(
        BehaviorKind::PerAgentHazard {
            class: "N".into(),
            rate: parse_expression("mu").unwrap(),
            effect: Effect::Die,
        },
        10_000,
        "mu",
        0.03,
    );
    let inflow = one_class(
        BehaviorKind::PopulationInflow {
            class: "N".into(),
            rate: parse_expression("s").unwrap(),
            signed: false,
        },
        0,
        "s",
        25.0,
    );
    let a = run_ensemble(&death, &cfg, 50, 2024).unwrap();
    let b = run_ensemble(&inflow, &cfg, 50, 2024).unwrap();
    let mut worst: f64 = 0.0;
    for t in [5usize, 10, 20] {
        let i = t * 10;
        let z_death = (a.mean[0][i] - 1e4 * (-0.03 * t as f64).exp()).abs() / a.standard_error(0, i);
        let z_inflow = (b.mean[0][i] - 25.0 * t as f64).abs() / b.standard_error(0, i);
        worst = worst.max(z_death).max(z_inflow);
    }
    check(worst <= 3.0, format!("largest deviation {worst:.2} standard errors (<= 3)"))
}

fn round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["kp3", "kuz2"] {
        let m = bundled::stock_flow(name).unwrap();
        let agent = sds_to_abs(&m).unwrap().model;
        let back = abs_to_sds(&agent, &residual_closures(&agent)).unwrap();
        let (s1, s2) = (StockFlowSystem::new(&m).unwrap(), StockFlowSystem::new(&back).unwrap());
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..m.stocks.len()).map(|_| rng.random_range(0.1..1e4)).collect();
            for (p, q) in s1.derivative(&x).unwrap().iter().zip(s2.derivative(&x).unwrap()) {
                let scale = p.abs().max(q.abs());
                if scale > 0.0 {
                    worst = worst.max((p - q).abs() / scale);
                }
            }
        }
    }
    check(worst <= 1e-9, format!("largest relative derivative gap {worst:e} (<= 1e-9)"))
}

fn kill_cap() -> Outcome {
    let cfg = preset("exp-spatial").unwrap();
    let run = execute(&cfg).unwrap();
    let ens = run.spatial.unwrap();
    let mut steps = 0;
    let mut violations = 0;
    for k in ens.replications.iter().flat_map(|r| &r.kills) {
        steps += 1;
        violations += usize::from(k.kills() > k.hunters.min(k.prey));
    }
    // five effectors, each next to its own tumour cell
    let mut state = SpatialState::new(
        50,
        50,
        &[(0, 0), (10, 10), (20, 20), (30, 30), (40, 40)],
        &[(1, 1), (11, 10), (20, 21), (31, 31), (41, 40), (45, 45)],
    );
    let rec = resolve_kills(&mut state, 1, 0);
    check(
        violations == 0 && steps == 50 * 1000 && rec.kills() == 5,
        format!(
            "{violations} cap violations over {steps} steps of {} runs; constructed grid kills {} of 5 effectors",
            ens.len(),
            rec.kills()
        ),
    )
}

fn divergence() -> Outcome {
    let run = execute(&preset("exp-kuz-100d").unwrap()).unwrap();
    let abs = run.report.abs.unwrap();
    let rmse = abs.comparison.iter().find(|c| c.name == "T").unwrap().rmse;
    let extinction = abs.extinction["E"];
    let ratio = abs.comparison.iter().find(|c| c.name == "E").unwrap().mean_ratio;
    check(
        rmse > 0.0 && extinction > 0.0,
        format!("tumour RMSE {rmse:.3}, effector extinction probability {extinction} (both > 0); E mean ratio {ratio:?}"),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = 0;
    for name in ["exp-kp-400d", "exp-kuz-100d", "exp-spatial"] {
        let cfg = preset(name).unwrap();
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        run_experiment(&cfg, &a).unwrap();
        run_experiment(&cfg, &b).unwrap();
        let (ta, tb) = (tree(&a), tree(&b));
        if ta != tb {
            return Err(format!("{name}: output trees differ"));
        }
        files += ta.len();
    }
    Ok(format!("3 presets, {files} files each byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 8] = [
        ("RK4 and Euler convergence order", 1, convergence),
        ("Kuznetsov SDS steady state by day 60", 1, steady_state),
        ("extinction is absorbing; SDS effectors stay positive", 30, absorption),
        ("ensemble means match mean-field solutions", 10, mean_field),
        ("round-trip conversion preserves derivatives", 1, round_trip),
        ("spatial kills never exceed the effector cap", 60, kill_cap),
        ("SDS and ABS diverge", 60, divergence),
        ("presets are deterministic", 300, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = within(Duration::from_secs(*limit), started, f());
        match outcome {
            Ok(d) => println!("criterion {}: PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
