//! A seeded agent ensemble of pure death against its exponential mean.

use dualsim::abs::run_ensemble;
use dualsim::model::{AgentClass, AgentModel, Behavior, BehaviorKind, BehaviorTag, Effect, ParameterSet};
use dualsim::parse_expression;
use dualsim::sds::SimConfig;

fn main() {
    let mut parameters = ParameterSet::new();
    parameters.insert("mu", 0.03, None);
    let model = AgentModel {
        name: "decay".into(),
        classes: vec![AgentClass { name: "N".into(), initial: 10_000, unit: None }],
        behaviors: vec![Behavior {
            name: "death".into(),
            kind: BehaviorKind::PerAgentHazard {
                class: "N".into(),
                rate: parse_expression("mu").unwrap(),
                effect: Effect::Die,
            },
            tag: BehaviorTag::Reactive,
        }],
        parameters,
        spatial: None,
    };
    let ensemble = run_ensemble(&model, &SimConfig::new(0.1, 20.0), 50, 7).unwrap();
    println!("{:>4} {:>10} {:>10} {:>8}", "t", "mean", "exact", "se");
    for day in [0usize, 5, 10, 20] {
        let i = day * 10;
        let exact = 1e4 * (-0.03 * day as f64).exp();
        println!(
            "{day:>4} {:>10.2} {exact:>10.2} {:>8.2}",
            ensemble.mean[0][i],
            ensemble.standard_error(0, i)
        );
    }
}
