use std::fs;
use std::process::Command;

fn dualsim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dualsim"));
    c.env_remove("DUALSIM_SEED");
    c
}

#[test]
fn simulate_sds_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let status = dualsim()
        .args(["simulate", "--model", "bundled:kuz2.sds", "--engine", "sds", "--horizon", "2", "--dt", "0.5"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = fs::read_to_string(out.join("sds/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("t,T,E\n0,100,5\n0.5,"));
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut c = dualsim();
        c.args(["simulate", "--model", "bundled:kuz2.sds", "--engine", "abs", "--horizon", "1", "--reps", "2"]);
        if let Some(v) = env {
            c.env("DUALSIM_SEED", v);
        }
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        let out = c.output().unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    assert!(run(None, None).contains("base seed 1729"));
    assert!(run(Some("77"), None).contains("base seed 77"));
    assert!(run(Some("77"), Some("5")).contains("base seed 5"));
}

#[test]
fn convert_both_ways() {
    let dir = tempfile::tempdir().unwrap();
    let abs = dir.path().join("kuz2.abs");
    let out = dualsim()
        .args(["convert", "--to", "abs", "--model", "bundled:kuz2.sds", "--out"])
        .arg(&abs)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(fs::read_to_string(&abs).unwrap().contains("kill: die T, rate = E, reactive"));
    let report = fs::read_to_string(dir.path().join("kuz2.abs.report.txt")).unwrap();
    assert!(report.contains("growth"));

    let sds = dir.path().join("kuz2.sds");
    let out = dualsim()
        .args(["convert", "--to", "sds", "--model"])
        .arg(&abs)
        .arg("--out")
        .arg(&sds)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no rate closure for behavior(s): growth, kill, proliferation, damage, apoptosis"));

    let out = dualsim()
        .args(["convert", "--to", "sds", "--closures", "bundled:kuz2.closures", "--model"])
        .arg(&abs)
        .arg("--out")
        .arg(&sds)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(fs::read_to_string(&sds).unwrap().contains("kill: T -> BOUNDARY, rate = T*E"));
}

#[test]
fn experiment_with_config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "name = \"small\"\nmodel = \"bundled:kuz2.sds\"\nengines = [\"paired\"]\nhorizon = 5.0\nn_reps = 3\nbase_seed = 9\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = dualsim()
        .arg("experiment")
        .arg("--config")
        .arg(dir.path().join("exp.toml"))
        .args(["--initial", "E=20", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("sds/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,T,E\n0,100,20\n"));
    assert!(out.join("abs/rep_2.csv").exists());
}

#[test]
fn unknown_preset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualsim()
        .args(["experiment", "--preset", "nope", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("exp-kuz-100d"));
}
