//! Grid simulation where each effector kills at most one tumour cell per
//! step. Writes agent positions of one run to `positions.csv` when a path is
//! given.
//!
//!     cargo run --release --example spatial_kill_cap -- positions.csv

use std::fs::File;
use std::io::{BufWriter, Write};

use dualsim::bundled;
use dualsim::conversion::sds_to_abs;
use dualsim::sds::SimConfig;
use dualsim::spatial::{run_spatial_ensemble, SpatialSystem};

fn main() {
    let model = sds_to_abs(&bundled::stock_flow("kuz2-spatial").unwrap()).unwrap().model;
    let config = SimConfig::new(0.1, 30.0);

    if let Some(path) = std::env::args().nth(1) {
        let system = SpatialSystem::new(&model).unwrap();
        let mut out = BufWriter::new(File::create(&path).unwrap());
        system.run(&config, 1, Some(&mut out as &mut dyn Write)).unwrap();
        println!("positions written to {path}");
    }

    let ensemble = run_spatial_ensemble(&model, &config, 20, 11).unwrap();
    let mut worst = 0;
    let mut total = 0;
    for k in ensemble.replications.iter().flat_map(|r| &r.kills) {
        assert!(k.kills() <= k.hunters.min(k.prey));
        worst = worst.max(k.kills());
        total += k.kills();
    }
    println!("20 runs, {total} kills, at most {worst} in one step");
    let last = ensemble.times.len() - 1;
    for (c, name) in ensemble.class_names.iter().enumerate() {
        println!(
            "{name}: mean at day 30 {:.2}, extinct in {:.0}% of runs",
            ensemble.mean[c][last],
            100.0 * ensemble.extinction[c]
        );
    }
}
