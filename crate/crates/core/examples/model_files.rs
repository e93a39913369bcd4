//! Read a model file, validate it and print it back in canonical form.
//!
//!     cargo run --example model_files -- path/to/model.sds

use dualsim::bundled;
use dualsim::model::validate_model;
use dualsim::modelfile::{parse_model_file, write_model_file};

fn main() {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).expect("readable model file"),
        None => bundled::source("kuz2.sds").unwrap().to_string(),
    };
    let model = match parse_model_file(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    assert!(validate_model(&model).is_empty());
    print!("{}", write_model_file(&model));
}
