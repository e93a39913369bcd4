//! Parse, print and evaluate rate expressions.
//!
//!     cargo run --example expressions -- "p*T*E/(g+T)"

use std::collections::HashMap;

use dualsim::expr::{eval_expression, parse_expression};

fn main() {
    let text = std::env::args().nth(1).unwrap_or_else(|| "p1*E*IL/(g1+IL)".to_string());
    let expr = match parse_expression(&text) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    println!("canonical: {expr}");
    println!("variables: {:?}", expr.variables());

    // every variable set to 1.5
    let env: HashMap<String, f64> = expr.variables().into_iter().map(|v| (v, 1.5)).collect();
    match eval_expression(&expr, &env) {
        Ok(v) => println!("value with all variables = 1.5: {v}"),
        Err(e) => println!("cannot evaluate: {e}"),
    }
}
