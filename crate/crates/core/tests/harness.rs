use std::fs;
use std::path::Path;

use dualsim::harness::{compare_trajectories, execute, preset, run_experiment, Engine, HarnessError};
use dualsim::sds::Trajectory;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[j]).collect()
}

#[test]
fn preset_hashes_are_pinned() {
    let pinned = [
        ("exp-kp-400d", "4ff3eb2cbc0cf8a2438145a9484615bfdb658406a3c9366ac89e00e8c073c0bc"),
        ("exp-kuz-100d", "64662ec47b7a47449d3e8e1304df58c01263415e00676ca5f9aef9f85c80c8e3"),
        ("exp-spatial", "7dd56fca1b966892dd95774096eb2dfb998e4550196bd537edb05c3c7e9b9b85"),
    ];
    for (name, hash) in pinned {
        assert_eq!(preset(name).unwrap().hash().unwrap(), hash, "{name}");
    }
}

fn small_kuz() -> dualsim::harness::ExperimentConfig {
    let mut cfg = preset("exp-kuz-100d").unwrap();
    cfg.n_reps = 6;
    cfg.horizon = 30.0;
    cfg.dt_sweep = vec![0.5, 0.1];
    cfg
}

#[test]
fn report_is_recomputable_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let report = run_experiment(&small_kuz(), &out).unwrap();

    // ensemble means equal the mean of the replication files
    let (eh, erows) = read_csv(&out.join("abs/ensemble.csv"));
    let reps: Vec<_> = (0..6).map(|i| read_csv(&out.join(format!("abs/rep_{i}.csv")))).collect();
    for class in ["T", "E"] {
        let mean = column(&eh, &erows, &format!("{class}_mean"));
        for (k, m) in mean.iter().enumerate() {
            let avg: f64 = reps.iter().map(|(h, r)| column(h, r, class)[k]).sum::<f64>() / 6.0;
            assert!((m - avg).abs() <= 1e-12 * avg.abs().max(1.0));
        }
    }

    // comparison metrics from the trajectory and ensemble files
    let (sh, srows) = read_csv(&out.join("sds/trajectory.csv"));
    let to_traj = |h: &[String], rows: &[Vec<f64>], suffix: &str| {
        let mut t = Trajectory::new(vec!["T".into(), "E".into()]);
        let times = column(h, rows, "t");
        let cols = [
            column(h, rows, &format!("T{suffix}")),
            column(h, rows, &format!("E{suffix}")),
        ];
        for (i, &ti) in times.iter().enumerate() {
            t.push(ti, &[cols[0][i], cols[1][i]]);
        }
        t
    };
    let sds = to_traj(&sh, &srows, "");
    let mean = to_traj(&eh, &erows, "_mean");
    let recomputed = compare_trajectories(&sds, &mean).unwrap();
    assert_eq!(recomputed, report.abs.as_ref().unwrap().comparison);

    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.starts_with("experiment exp-kuz-100d\n"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["abs"]["n_reps"], 6);
    assert!(out.join("sweep/abs_dt_0.5.csv").exists());
    assert!(out.join("plot/sds_T.dat").exists());
    assert!(out.join("conversion.txt").exists());
}

#[test]
fn engine_failure_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bad.abs");
    fs::write(
        &model,
        "[model]\nname = bad\n[parameters]\nk = -1\n[agents]\nN = 10\n[behaviors]\ndeath: die N, rate = k, reactive\n",
    )
    .unwrap();
    let mut cfg = small_kuz();
    cfg.model = "bad.abs".into();
    cfg.engines = vec![Engine::Abs];
    cfg.dt_sweep.clear();
    cfg.base_dir = Some(dir.path().to_path_buf());
    let out = dir.path().join("out");
    let err = run_experiment(&cfg, &out).unwrap_err();
    assert!(matches!(err, HarnessError::Engine { engine: Engine::Abs, .. }), "{err}");
    assert!(err.to_string().contains("seeds"));
    assert!(!out.exists());
}

#[test]
fn write_failure_removes_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    // a plain file where the `sds` directory must go
    fs::write(out.join("sds"), "").unwrap();
    fs::write(out.join("keep.txt"), "mine").unwrap();
    let err = run_experiment(&small_kuz(), &out).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }));
    let mut left: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    left.sort();
    assert_eq!(left, ["keep.txt", "sds"]);
}

#[test]
fn runs_are_deterministic_in_memory() {
    let a = execute(&small_kuz()).unwrap();
    let b = execute(&small_kuz()).unwrap();
    assert_eq!(a.report, b.report);
    let mut other = small_kuz();
    other.base_seed += 1;
    assert_ne!(execute(&other).unwrap().abs, a.abs);
}
