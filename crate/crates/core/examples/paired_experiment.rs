//! Run a bundled experiment preset and write its output tree.
//!
//!     cargo run --release --example paired_experiment -- exp-kuz-100d out/

use std::path::PathBuf;

use dualsim::harness::{preset, render_report, run_experiment};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "exp-kuz-100d".to_string());
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(&name));
    let Some(config) = preset(&name) else {
        eprintln!("unknown preset {name}");
        std::process::exit(1);
    };
    let report = run_experiment(&config, &out).unwrap();
    print!("{}", render_report(&report));
    println!("\noutput in {}", out.display());
}
