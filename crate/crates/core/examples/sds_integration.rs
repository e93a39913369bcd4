//! Deterministic integration of the effector / tumour model and the
//! convergence order of the two integrators on logistic growth.

use dualsim::bundled;
use dualsim::model::{Endpoint, Flow, ParameterSet, Stock, StockFlowModel};
use dualsim::parse_expression;
use dualsim::sds::{detect_steady_state, integrate, Method, SimConfig};

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

fn main() {
    let model = bundled::stock_flow("kuz2").unwrap();
    let traj = integrate(&model, &SimConfig::new(0.01, 100.0)).unwrap();
    println!("kuz2, RK4 dt 0.01");
    for day in [0, 5, 10, 20, 40, 60, 100] {
        let i = day * 100;
        println!("  t = {day:>3}: T = {:>10.4}  E = {:.4e}", traj.series[0][i], traj.series[1][i]);
    }
    println!("  steady state from t = {:?}", detect_steady_state(&traj, 10.0, 1e-3));

    let exact = |t: f64| 500.0 / (1.0 + 4.0 * (-1.636 * t).exp());
    println!("\nlogistic growth, max error over 10 days");
    for method in [Method::Euler, Method::Rk4] {
        for dt in [0.1, 0.05, 0.025] {
            let cfg = SimConfig::new(dt, 10.0).with_method(method);
            let t = integrate(&logistic(), &cfg).unwrap();
            let err = t
                .times
                .iter()
                .zip(&t.series[0])
                .map(|(&ti, &x)| (x - exact(ti)).abs())
                .fold(0.0, f64::max);
            println!("  {method:?} dt {dt:<6} {err:.3e}");
        }
    }
}
