//! Time-stepped stochastic simulation of whole-number populations.
//!
//! Agents of a class are exchangeable, so instead of visiting every agent
//! the engine draws how many of them fire each behaviour in a step: a
//! binomial draw per (class, behaviour) for per-agent hazards and a Poisson
//! draw for population-level inflows. Within one step:
//!
//! 1. every rate is evaluated against the counts at the start of the step;
//! 2. removals (deaths and transforms) are drawn jointly per class as
//!    competing risks;
//! 3. reproduction is drawn from the survivors;
//! 4. inflows are added (a negative signed inflow removes agents instead).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use crate::error::SimError;
use crate::expr::BoundExpr;
use crate::model::{validate_agent, AgentModel, BehaviorKind, Effect};
use crate::sds::{SimConfig, Trajectory};
use crate::spatial::KillRecord;

/// Default ABS step, in days.
pub const DEFAULT_ABS_DT: f64 = 0.1;
/// Normal quantile used for the 95% confidence half-width.
pub const Z95: f64 = 1.96;

/// Probability that a constant hazard `rate` fires within `dt`: `1 - exp(-rate*dt)`.
pub fn hazard_probability(behavior: &str, rate: f64, dt: f64) -> Result<f64, SimError> {
    check_rate(behavior, rate)?;
    if rate < 0.0 {
        return Err(SimError::NegativeRate {
            behavior: behavior.to_string(),
            rate,
        });
    }
    Ok((-(-rate * dt).exp_m1()).clamp(0.0, 1.0))
}

/// Poisson-distributed number of arrivals with mean `rate*dt`.
pub fn sample_inflow_count<R: Rng + ?Sized>(
    behavior: &str,
    rate: f64,
    dt: f64,
    rng: &mut R,
) -> Result<u64, SimError> {
    check_rate(behavior, rate)?;
    if rate < 0.0 {
        return Err(SimError::NegativeRate {
            behavior: behavior.to_string(),
            rate,
        });
    }
    Ok(poisson(rate * dt, rng))
}

fn check_rate(behavior: &str, rate: f64) -> Result<(), SimError> {
    if rate.is_finite() {
        Ok(())
    } else {
        Err(SimError::NonFiniteRate {
            behavior: behavior.to_string(),
            rate,
        })
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive Poisson mean");
    dist.sample(rng) as u64
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("probability in [0, 1]").sample(rng)
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` in an ensemble started from `base_seed`.
pub fn replication_seed(base_seed: u64, index: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(index as u64))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-class counts plus the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub counts: Vec<u64>,
    pub clock: f64,
}

impl PopulationState {
    pub fn initial(model: &AgentModel) -> Self {
        Self {
            counts: model.classes.iter().map(|c| c.initial).collect(),
            clock: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Action {
    Die { class: usize },
    Reproduce { class: usize, count: u64, target: usize },
    Inflow { class: usize, signed: bool },
    Transform { from: usize, to: usize },
}

#[derive(Debug, Clone)]
struct CompiledBehavior {
    name: String,
    action: Action,
    rate: BoundExpr,
}

/// Number of firings per behaviour drawn for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvents {
    /// Firings per behaviour, in model order.
    pub fired: Vec<u64>,
    /// Agents removed by negative signed inflows, per behaviour.
    pub removed: Vec<u64>,
}

/// A validated agent model compiled for repeated stepping.
#[derive(Debug, Clone)]
pub struct AgentSystem {
    class_names: Vec<String>,
    params: Vec<f64>,
    behaviors: Vec<CompiledBehavior>,
}

impl AgentSystem {
    pub fn new(model: &AgentModel) -> Result<Self, SimError> {
        let diags = validate_agent(model);
        if !diags.is_empty() {
            return Err(SimError::InvalidModel(diags));
        }
        let class_names: Vec<String> = model.classes.iter().map(|c| c.name.clone()).collect();
        let param_names: Vec<&str> = model.parameters.names().collect();
        let params = param_names
            .iter()
            .map(|n| model.parameters.get(n).unwrap())
            .collect();
        let n = class_names.len();
        let resolve = |name: &str| {
            class_names
                .iter()
                .position(|c| c == name)
                .or_else(|| param_names.iter().position(|&p| p == name).map(|i| n + i))
        };
        let idx = |name: &str| model.class_index(name).expect("validated class");
        let mut behaviors = Vec::with_capacity(model.behaviors.len());
        for b in &model.behaviors {
            let action = match &b.kind {
                BehaviorKind::PerAgentHazard {
                    class,
                    effect: Effect::Die,
                    ..
                } => Action::Die { class: idx(class) },
                BehaviorKind::PerAgentHazard {
                    class,
                    effect: Effect::Reproduce { count, class: target },
                    ..
                } => Action::Reproduce {
                    class: idx(class),
                    count: u64::from(*count),
                    target: idx(target),
                },
                BehaviorKind::PopulationInflow { class, signed, .. } => Action::Inflow {
                    class: idx(class),
                    signed: *signed,
                },
                BehaviorKind::Transform { from, to, .. } => Action::Transform {
                    from: idx(from),
                    to: idx(to),
                },
            };
            let rate = b.rate().bind(&resolve).map_err(|source| SimError::Behavior {
                behavior: b.name.clone(),
                source,
            })?;
            behaviors.push(CompiledBehavior {
                name: b.name.clone(),
                action,
                rate,
            });
        }
        Ok(Self {
            class_names,
            params,
            behaviors,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn behavior_names(&self) -> impl Iterator<Item = &str> {
        self.behaviors.iter().map(|b| b.name.as_str())
    }

    pub fn behavior_index(&self, name: &str) -> Option<usize> {
        self.behaviors.iter().position(|b| b.name == name)
    }

    /// Index of the class whose count a behaviour removes, if it removes any.
    pub(crate) fn removal_class(&self, behavior: usize) -> Option<usize> {
        match self.behaviors[behavior].action {
            Action::Die { class } => Some(class),
            Action::Transform { from, .. } => Some(from),
            Action::Inflow { class, signed: true } => Some(class),
            _ => None,
        }
    }

    /// Class receiving agents from a firing, with agents per firing.
    pub(crate) fn creation(&self, behavior: usize) -> Option<(usize, u64, Option<usize>)> {
        match self.behaviors[behavior].action {
            Action::Reproduce { class, count, target } => Some((target, count, Some(class))),
            Action::Inflow { class, .. } => Some((class, 1, None)),
            Action::Transform { to, .. } => Some((to, 1, None)),
            Action::Die { .. } => None,
        }
    }

    pub(crate) fn is_transform(&self, behavior: usize) -> bool {
        matches!(self.behaviors[behavior].action, Action::Transform { .. })
    }

    fn rates(&self, counts: &[u64], skip: Option<usize>) -> Result<Vec<f64>, SimError> {
        let mut slots: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        slots.extend_from_slice(&self.params);
        let mut out = vec![0.0; self.behaviors.len()];
        for (i, b) in self.behaviors.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            // Per-agent hazards of an empty class never fire; skipping them
            // also guards rates that divide by the class count.
            let owner = match b.action {
                Action::Die { class } | Action::Reproduce { class, .. } => Some(class),
                Action::Transform { from, .. } => Some(from),
                Action::Inflow { .. } => None,
            };
            if owner.is_some_and(|c| counts[c] == 0) {
                continue;
            }
            let rate = b.rate.eval(&slots).map_err(|source| SimError::Behavior {
                behavior: b.name.clone(),
                source,
            })?;
            check_rate(&b.name, rate)?;
            out[i] = rate;
        }
        Ok(out)
    }

    /// Draws the events of one step without applying them.
    ///
    /// `skip` excludes one behaviour (the spatial engine replaces the contact
    /// behaviour by explicit kills).
    pub fn sample_events<R: Rng + ?Sized>(
        &self,
        counts: &[u64],
        dt: f64,
        rng: &mut R,
        skip: Option<usize>,
    ) -> Result<StepEvents, SimError> {
        let rates = self.rates(counts, skip)?;
        let nb = self.behaviors.len();
        let mut fired = vec![0u64; nb];
        let mut removed = vec![0u64; nb];
        let mut running = counts.to_vec();

        // Removals as competing risks per class.
        for (class, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mut members = Vec::new();
            let mut total = 0.0;
            for (i, b) in self.behaviors.iter().enumerate() {
                let owned = match b.action {
                    Action::Die { class: c } => c == class,
                    Action::Transform { from, .. } => from == class,
                    _ => false,
                };
                if owned && Some(i) != skip {
                    if rates[i] < 0.0 {
                        return Err(SimError::NegativeRate {
                            behavior: b.name.clone(),
                            rate: rates[i],
                        });
                    }
                    if rates[i] > 0.0 {
                        members.push(i);
                        total += rates[i];
                    }
                }
            }
            if members.is_empty() {
                continue;
            }
            let p = hazard_probability(&self.behaviors[members[0]].name, total, dt)?;
            let mut remaining = binomial(count, p, rng);
            running[class] -= remaining;
            let mut remaining_rate = total;
            for (k, &i) in members.iter().enumerate() {
                let n = if k + 1 == members.len() {
                    remaining
                } else {
                    let share = (rates[i] / remaining_rate).clamp(0.0, 1.0);
                    binomial(remaining, share, rng)
                };
                fired[i] = n;
                remaining -= n;
                remaining_rate -= rates[i];
            }
        }
        let survivors = running.clone();
        for (i, b) in self.behaviors.iter().enumerate() {
            if let Action::Transform { to, .. } = b.action {
                running[to] += fired[i];
            }
        }

        // Reproduction from survivors.
        for (i, b) in self.behaviors.iter().enumerate() {
            if let Action::Reproduce { class, count, target } = b.action {
                if Some(i) == skip || survivors[class] == 0 {
                    continue;
                }
                let p = hazard_probability(&b.name, rates[i], dt)?;
                let n = binomial(survivors[class], p, rng);
                fired[i] = n;
                running[target] += n * count;
            }
        }

        // Population inflows.
        for (i, b) in self.behaviors.iter().enumerate() {
            if let Action::Inflow { class, signed } = b.action {
                if Some(i) == skip {
                    continue;
                }
                let rate = rates[i];
                if rate < 0.0 && signed {
                    let n = poisson(-rate * dt, rng).min(running[class]);
                    removed[i] = n;
                    running[class] -= n;
                } else {
                    let n = sample_inflow_count(&b.name, rate, dt, rng)?;
                    fired[i] = n;
                    running[class] += n;
                }
            }
        }
        Ok(StepEvents { fired, removed })
    }

    /// Applies sampled events to class counts.
    pub fn apply(&self, counts: &mut [u64], events: &StepEvents) {
        for (i, b) in self.behaviors.iter().enumerate() {
            let n = events.fired[i];
            match b.action {
                Action::Die { class } => counts[class] -= n,
                Action::Transform { from, to } => {
                    counts[from] -= n;
                    counts[to] += n;
                }
                Action::Reproduce { count, target, .. } => counts[target] += n * count,
                Action::Inflow { class, .. } => {
                    counts[class] += n;
                    counts[class] -= events.removed[i];
                }
            }
        }
    }

    /// Advances `state` by one step, returning the sampled events.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut PopulationState,
        dt: f64,
        rng: &mut R,
    ) -> Result<StepEvents, SimError> {
        let events = self.sample_events(&state.counts, dt, rng, None)?;
        self.apply(&mut state.counts, &events);
        state.clock += dt;
        Ok(events)
    }

    pub fn run(
        &self,
        initial: &[u64],
        config: &SimConfig,
        seed: u64,
    ) -> Result<ReplicationResult, SimError> {
        let wrap = |e: SimError| SimError::Replication {
            seed,
            source: Box::new(e),
        };
        let steps = config.steps().map_err(wrap)?;
        let mut rng = rng_from_seed(seed);
        let mut state = PopulationState {
            counts: initial.to_vec(),
            clock: 0.0,
        };
        let mut result = ReplicationResult::new(seed, self.class_names.clone(), steps);
        let mut tallies = vec![0u64; self.behaviors.len()];
        result.record(0.0, &state.counts);
        for step in 0..steps {
            let events = self.step(&mut state, config.dt, &mut rng).map_err(|e| {
                wrap(SimError::Step {
                    step,
                    source: Box::new(e),
                })
            })?;
            for (t, (f, r)) in tallies.iter_mut().zip(events.fired.iter().zip(&events.removed)) {
                *t += f + r;
            }
            result.record(config.time_at(step + 1), &state.counts);
        }
        result.tallies = self
            .behaviors
            .iter()
            .map(|b| b.name.clone())
            .zip(tallies)
            .collect();
        Ok(result)
    }
}

/// Advances a population state by one step of `dt`.
pub fn abs_step<R: Rng + ?Sized>(
    model: &AgentModel,
    state: &PopulationState,
    dt: f64,
    rng: &mut R,
) -> Result<PopulationState, SimError> {
    let system = AgentSystem::new(model)?;
    let mut next = state.clone();
    system.step(&mut next, dt, rng)?;
    Ok(next)
}

/// One seeded stochastic run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub seed: u64,
    pub times: Vec<f64>,
    pub class_names: Vec<String>,
    /// Counts per class on the step grid.
    pub series: Vec<Vec<u64>>,
    /// Total firings per behaviour.
    pub tallies: BTreeMap<String, u64>,
    /// Contact kills per step; empty for non-spatial runs.
    pub kills: Vec<KillRecord>,
}

impl ReplicationResult {
    pub(crate) fn new(seed: u64, class_names: Vec<String>, steps: usize) -> Self {
        let series = vec![Vec::with_capacity(steps + 1); class_names.len()];
        Self {
            seed,
            times: Vec::with_capacity(steps + 1),
            class_names,
            series,
            tallies: BTreeMap::new(),
            kills: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, t: f64, counts: &[u64]) {
        self.times.push(t);
        for (s, &c) in self.series.iter_mut().zip(counts) {
            s.push(c);
        }
    }

    pub fn series(&self, class: &str) -> Option<&[u64]> {
        self.class_names
            .iter()
            .position(|c| c == class)
            .map(|i| self.series[i].as_slice())
    }
}

pub fn run_replication(
    model: &AgentModel,
    config: &SimConfig,
    seed: u64,
) -> Result<ReplicationResult, SimError> {
    let system = AgentSystem::new(model)?;
    let initial = PopulationState::initial(model).counts;
    system.run(&initial, config, seed)
}

/// A family of replications with per-time-point statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub class_names: Vec<String>,
    pub times: Vec<f64>,
    pub replications: Vec<ReplicationResult>,
    pub mean: Vec<Vec<f64>>,
    /// Sample standard deviation (n - 1 denominator; 0 for a single run).
    pub sd: Vec<Vec<f64>>,
    /// Normal-approximation 95% confidence half-width of the mean.
    pub ci95: Vec<Vec<f64>>,
    /// Fraction of replications in which the class count was 0 at some grid point.
    pub extinction: Vec<f64>,
}

impl Ensemble {
    /// Computes statistics from raw replications (which must share a grid).
    pub fn from_replications(
        class_names: Vec<String>,
        times: Vec<f64>,
        replications: Vec<ReplicationResult>,
    ) -> Self {
        let n = replications.len();
        let nc = class_names.len();
        let nt = times.len();
        let mut mean = vec![vec![0.0; nt]; nc];
        let mut sd = vec![vec![0.0; nt]; nc];
        let mut ci95 = vec![vec![0.0; nt]; nc];
        let mut extinction = vec![0.0; nc];
        if n > 0 {
            for c in 0..nc {
                for t in 0..nt {
                    let sum: u128 = replications.iter().map(|r| u128::from(r.series[c][t])).sum();
                    let m = sum as f64 / n as f64;
                    mean[c][t] = m;
                    if n > 1 {
                        let ss: f64 = replications
                            .iter()
                            .map(|r| {
                                let d = r.series[c][t] as f64 - m;
                                d * d
                            })
                            .sum();
                        sd[c][t] = (ss / (n - 1) as f64).sqrt();
                        ci95[c][t] = Z95 * sd[c][t] / (n as f64).sqrt();
                    }
                }
                let extinct = replications
                    .iter()
                    .filter(|r| r.series[c].contains(&0))
                    .count();
                extinction[c] = extinct as f64 / n as f64;
            }
        }
        Self {
            class_names,
            times,
            replications,
            mean,
            sd,
            ci95,
            extinction,
        }
    }

    pub fn len(&self) -> usize {
        self.replications.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replications.is_empty()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == class)
    }

    pub fn mean_of(&self, class: &str) -> Option<&[f64]> {
        self.class_index(class).map(|i| self.mean[i].as_slice())
    }

    /// Standard error of the mean at grid point `t`.
    pub fn standard_error(&self, class: usize, t: usize) -> f64 {
        if self.replications.is_empty() {
            return 0.0;
        }
        self.sd[class][t] / (self.replications.len() as f64).sqrt()
    }

    pub fn extinction_of(&self, class: &str) -> Option<f64> {
        self.class_index(class).map(|i| self.extinction[i])
    }

    /// The ensemble mean as a trajectory.
    pub fn mean_trajectory(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            names: self.class_names.clone(),
            series: self.mean.clone(),
        }
    }
}

/// Runs `n_reps` replications of `run` in parallel and aggregates them in
/// index order.
pub fn run_ensemble_with<F>(
    class_names: Vec<String>,
    n_reps: usize,
    base_seed: u64,
    run: F,
) -> Result<Ensemble, SimError>
where
    F: Fn(u64) -> Result<ReplicationResult, SimError> + Sync,
{
    if n_reps == 0 {
        return Err(SimError::InvalidConfig(
            "an ensemble needs at least one replication".to_string(),
        ));
    }
    let results: Vec<(u64, Result<ReplicationResult, SimError>)> = (0..n_reps)
        .into_par_iter()
        .map(|i| {
            let seed = replication_seed(base_seed, i);
            (seed, run(seed))
        })
        .collect();
    let mut reps = Vec::with_capacity(n_reps);
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(rep) => reps.push(rep),
            Err(e) => failures.push((seed, e)),
        }
    }
    if !failures.is_empty() {
        return Err(SimError::Ensemble(failures));
    }
    let times = reps[0].times.clone();
    Ok(Ensemble::from_replications(class_names, times, reps))
}

pub fn run_ensemble(
    model: &AgentModel,
    config: &SimConfig,
    n_reps: usize,
    base_seed: u64,
) -> Result<Ensemble, SimError> {
    let system = AgentSystem::new(model)?;
    let initial = PopulationState::initial(model).counts;
    run_ensemble_with(system.class_names().to_vec(), n_reps, base_seed, |seed| {
        system.run(&initial, config, seed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentClass, Behavior, BehaviorTag, ParameterSet};
    use crate::expr::parse_expression;

    fn class(name: &str, initial: u64) -> AgentClass {
        AgentClass { name: name.into(), initial, unit: None }
    }

    fn hazard(name: &str, class: &str, rate: &str, effect: Effect) -> Behavior {
        Behavior {
            name: name.into(),
            kind: BehaviorKind::PerAgentHazard {
                class: class.into(),
                rate: parse_expression(rate).unwrap(),
                effect,
            },
            tag: BehaviorTag::Reactive,
        }
    }

    fn inflow(name: &str, class: &str, rate: &str, signed: bool) -> Behavior {
        Behavior {
            name: name.into(),
            kind: BehaviorKind::PopulationInflow {
                class: class.into(),
                rate: parse_expression(rate).unwrap(),
                signed,
            },
            tag: BehaviorTag::Reactive,
        }
    }

    fn model(classes: Vec<AgentClass>, behaviors: Vec<Behavior>, params: &[(&str, f64)]) -> AgentModel {
        let mut parameters = ParameterSet::new();
        for &(k, v) in params {
            parameters.insert(k, v, None);
        }
        AgentModel {
            name: "test".into(),
            classes,
            behaviors,
            parameters,
            spatial: None,
        }
    }

    fn pure_death(n0: u64) -> AgentModel {
        model(
            vec![class("X", n0)],
            vec![hazard("death", "X", "mu", Effect::Die)],
            &[("mu", 0.03)],
        )
    }

    #[test]
    fn hazard_probability_examples() {
        assert_eq!(hazard_probability("b", 0.0, 1.0).unwrap(), 0.0);
        let p = hazard_probability("b", 0.3743, 1.0).unwrap();
        assert!((p - 0.31222).abs() < 1e-5, "{p}");
        assert!((p - (1.0 - (-0.3743f64).exp())).abs() < 1e-15);
        let big = hazard_probability("b", 1e12, 1.0).unwrap();
        assert!(big <= 1.0 && big > 0.999_999);
        assert!(matches!(
            hazard_probability("apoptosis", -1.0, 1.0),
            Err(SimError::NegativeRate { behavior, .. }) if behavior == "apoptosis"
        ));
    }

    #[test]
    fn inflow_sampling_statistics() {
        let mut rng = rng_from_seed(7);
        assert!((0..100).all(|_| sample_inflow_count("s", 0.0, 1.0, &mut rng).unwrap() == 0));
        let draws: Vec<f64> = (0..10_000)
            .map(|_| sample_inflow_count("s", 4.0, 1.0, &mut rng).unwrap() as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // se(mean) = sqrt(4/n) = 0.02
        assert!((mean - 4.0).abs() < 0.06, "{mean}");
        // var of the sample variance for Poisson: (mu + 2 mu^2 n/(n-1)) / n
        let sd_var = ((4.0 + 2.0 * 16.0 * n / (n - 1.0)) / n).sqrt();
        assert!((var - 4.0).abs() < 3.0 * sd_var, "{var}");
        assert!(sample_inflow_count("s", -1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn empty_class_without_inflow_stays_empty() {
        let m = model(
            vec![class("E", 0), class("T", 50)],
            vec![
                hazard("prolif", "E", "2*T", Effect::Reproduce { count: 1, class: "E".into() }),
                hazard("death", "E", "1", Effect::Die),
            ],
            &[],
        );
        let mut rng = rng_from_seed(1);
        let mut state = PopulationState::initial(&m);
        for _ in 0..100 {
            state = abs_step(&m, &state, 0.1, &mut rng).unwrap();
            assert_eq!(state.counts[0], 0);
        }
    }

    #[test]
    fn all_zero_rates_leave_state_unchanged() {
        let m = model(
            vec![class("A", 10), class("B", 3)],
            vec![
                hazard("d", "A", "0", Effect::Die),
                inflow("i", "B", "0*A", false),
            ],
            &[],
        );
        let mut rng = rng_from_seed(3);
        let s0 = PopulationState::initial(&m);
        let s1 = abs_step(&m, &s0, 0.5, &mut rng).unwrap();
        assert_eq!(s1.counts, s0.counts);
        assert!((s1.clock - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pure_death_mean_matches_exponential() {
        let config = SimConfig::new(0.1, 10.0);
        let ens = run_ensemble(&pure_death(1000), &config, 50, 11).unwrap();
        let t = ens.times.len() - 1;
        let expected = 1000.0 * (-0.3f64).exp();
        let se = ens.standard_error(0, t);
        assert!((ens.mean[0][t] - expected).abs() < 3.0 * se, "{} vs {expected} (se {se})", ens.mean[0][t]);
        assert!((expected - 740.8).abs() < 0.05);
    }

    #[test]
    fn replications_are_reproducible() {
        let config = SimConfig::new(0.1, 5.0);
        let a = run_replication(&pure_death(200), &config, 99).unwrap();
        let b = run_replication(&pure_death(200), &config, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.series[0].len(), 51);
        let c = run_replication(&pure_death(200), &config, 100).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn horizon_zero_records_initial_counts() {
        let r = run_replication(&pure_death(17), &SimConfig::new(0.1, 0.0), 5).unwrap();
        assert_eq!(r.times, vec![0.0]);
        assert_eq!(r.series, vec![vec![17]]);
    }

    #[test]
    fn single_replication_ensemble() {
        let config = SimConfig::new(0.1, 2.0);
        let ens = run_ensemble(&pure_death(100), &config, 1, 5).unwrap();
        let rep = &ens.replications[0];
        for (m, &x) in ens.mean[0].iter().zip(&rep.series[0]) {
            assert_eq!(*m, x as f64);
        }
        assert!(ens.sd[0].iter().all(|&s| s == 0.0));
        assert_eq!(rep.seed, replication_seed(5, 0));
    }

    #[test]
    fn zero_rate_class_never_goes_extinct() {
        let m = model(vec![class("A", 5)], vec![hazard("d", "A", "0", Effect::Die)], &[]);
        let ens = run_ensemble(&m, &SimConfig::new(0.1, 1.0), 10, 1).unwrap();
        assert_eq!(ens.extinction[0], 0.0);
    }

    #[test]
    fn negative_rate_errors_report_seeds() {
        let m = model(vec![class("A", 5)], vec![hazard("d", "A", "0-1", Effect::Die)], &[]);
        match run_ensemble(&m, &SimConfig::new(0.1, 1.0), 3, 1) {
            Err(SimError::Ensemble(failures)) => {
                let seeds: Vec<u64> = failures.iter().map(|(s, _)| *s).collect();
                assert_eq!(seeds, (0..3).map(|i| replication_seed(1, i)).collect::<Vec<_>>());
                assert!(failures[0].1.to_string().contains("`d`"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn signed_inflow_removes_when_negative() {
        let m = model(
            vec![class("T", 1000)],
            vec![inflow("growth", "T", "T*(1-T/500)", true)],
            &[],
        );
        let mut rng = rng_from_seed(4);
        let s = abs_step(&m, &PopulationState::initial(&m), 0.1, &mut rng).unwrap();
        assert!(s.counts[0] < 1000);
        let unsigned = model(
            vec![class("T", 1000)],
            vec![inflow("growth", "T", "T*(1-T/500)", false)],
            &[],
        );
        assert!(matches!(
            abs_step(&unsigned, &PopulationState::initial(&unsigned), 0.1, &mut rng),
            Err(SimError::NegativeRate { .. })
        ));
    }

    #[test]
    fn competing_hazards_split_by_rate() {
        let m = model(
            vec![class("A", 100_000), class("B", 0)],
            vec![
                hazard("d1", "A", "1", Effect::Die),
                hazard("d2", "A", "3", Effect::Die),
                Behavior {
                    name: "t".into(),
                    kind: BehaviorKind::Transform {
                        from: "A".into(),
                        to: "B".into(),
                        rate: parse_expression("0").unwrap(),
                    },
                    tag: BehaviorTag::Reactive,
                },
            ],
            &[],
        );
        let sys = AgentSystem::new(&m).unwrap();
        let mut rng = rng_from_seed(8);
        let ev = sys.sample_events(&[100_000, 0], 0.1, &mut rng, None).unwrap();
        // total removal probability 1 - e^{-0.4}, split 1:3
        let total = (ev.fired[0] + ev.fired[1]) as f64;
        let expected = 100_000.0 * (1.0 - (-0.4f64).exp());
        assert!((total - expected).abs() < 5.0 * (expected * 0.67).sqrt());
        let share = ev.fired[1] as f64 / total;
        assert!((share - 0.75).abs() < 0.02, "{share}");
        assert_eq!(ev.fired[2], 0);
    }

    #[test]
    fn transform_moves_agents() {
        let m = model(
            vec![class("A", 1000), class("B", 0)],
            vec![Behavior {
                name: "t".into(),
                kind: BehaviorKind::Transform {
                    from: "A".into(),
                    to: "B".into(),
                    rate: parse_expression("k").unwrap(),
                },
                tag: BehaviorTag::Reactive,
            }],
            &[("k", 2.0)],
        );
        let r = run_replication(&m, &SimConfig::new(0.1, 1.0), 3).unwrap();
        for t in 0..r.times.len() {
            assert_eq!(r.series[0][t] + r.series[1][t], 1000);
        }
        assert!(r.series[1][10] > 0);
    }

    #[test]
    fn splitmix_known_values() {
        // Reference outputs of SplitMix64 seeded with 0 (first two draws).
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }
}
