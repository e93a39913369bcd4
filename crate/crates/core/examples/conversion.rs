//! Convert the three-population model to agent form, print the conversion
//! report, and rebuild the stock-flow form from the agent rules.

use dualsim::bundled;
use dualsim::conversion::{abs_to_sds, residual_closures, sds_to_abs, RateClosureSet};
use dualsim::model::ModelDefinition;
use dualsim::modelfile::write_model_file;
use dualsim::sds::StockFlowSystem;

fn main() {
    let kp3 = bundled::stock_flow("kp3").unwrap();
    let conv = sds_to_abs(&kp3).unwrap();
    print!("{}", conv.report);
    println!();
    print!("{}", write_model_file(&ModelDefinition::Agent(conv.model.clone())));

    let back = abs_to_sds(&conv.model, &residual_closures(&conv.model)).unwrap();
    let a = StockFlowSystem::new(&kp3).unwrap();
    let b = StockFlowSystem::new(&back).unwrap();
    let x = [12.0, 340.0, 5.5];
    println!("\nderivatives at {x:?}");
    println!("  original: {:?}", a.derivative(&x).unwrap());
    println!("  rebuilt:  {:?}", b.derivative(&x).unwrap());

    // without closures the agent form cannot be turned back
    let hand = bundled::agent("kuz2").unwrap();
    println!("\n{}", abs_to_sds(&hand, &RateClosureSet::default()).unwrap_err());
}
