//! Grid variant of the agent engine: hunters (effector cells) walk towards
//! the nearest prey (tumour cell) and kill on contact, so kills per step can
//! never exceed the number of hunters.
//!
//! Geometry is a square lattice with the Chebyshev metric and king moves.
//! Several agents may share a cell. Prey never move.
//!
//! One step runs, in order: targeting and movement of every hunter, contact
//! kills, the remaining (non-spatial) behaviours sampled as in
//! [`crate::abs`], and the clock advance.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::seq::index::sample;
use rand::Rng;

use crate::abs::{rng_from_seed, run_ensemble_with, AgentSystem, Ensemble, ReplicationResult};
use crate::error::SimError;
use crate::model::{AgentModel, NewbornPlacement, Placement, SpatialConfig};
use crate::sds::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Agent {
    pub id: u64,
    pub x: u32,
    pub y: u32,
}

impl Agent {
    pub fn pos(&self) -> (u32, u32) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialState {
    pub width: u32,
    pub height: u32,
    /// Hunters in ascending id order.
    pub hunters: Vec<Agent>,
    /// Prey in ascending id order.
    pub prey: Vec<Agent>,
    next_hunter_id: u64,
    next_prey_id: u64,
    pub clock: f64,
}

impl SpatialState {
    pub fn new(width: u32, height: u32, hunters: &[(u32, u32)], prey: &[(u32, u32)]) -> Self {
        let mk = |ps: &[(u32, u32)]| {
            ps.iter()
                .enumerate()
                .map(|(i, &(x, y))| Agent { id: i as u64, x, y })
                .collect::<Vec<_>>()
        };
        Self {
            width,
            height,
            hunters: mk(hunters),
            prey: mk(prey),
            next_hunter_id: hunters.len() as u64,
            next_prey_id: prey.len() as u64,
            clock: 0.0,
        }
    }

    fn in_bounds(&self, (x, y): (u32, u32)) -> bool {
        x < self.width && y < self.height
    }
}

/// Kills resolved in one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillRecord {
    pub step: usize,
    /// (hunter id, prey id) pairs.
    pub pairs: Vec<(u64, u64)>,
    /// Hunters present when kills were resolved.
    pub hunters: u64,
    /// Prey present when kills were resolved.
    pub prey: u64,
}

impl KillRecord {
    pub fn kills(&self) -> u64 {
        self.pairs.len() as u64
    }
}

pub fn chebyshev(a: (u32, u32), b: (u32, u32)) -> u32 {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Id of the tumour closest to `position`; ties go to the lowest id.
pub fn nearest_tumour_target(position: (u32, u32), tumours: &[Agent]) -> Option<u64> {
    tumours
        .iter()
        .map(|t| (chebyshev(position, t.pos()), t.id))
        .min()
        .map(|(_, id)| id)
}

/// Moves up to `speed` king moves from `position` towards `target`, stopping
/// on the target.
pub fn move_effector(position: (u32, u32), target: (u32, u32), speed: u32) -> (u32, u32) {
    let step = |from: u32, to: u32, n: u32| {
        if to > from {
            from + n.min(to - from)
        } else {
            from - n.min(from - to)
        }
    };
    (
        step(position.0, target.0, speed),
        step(position.1, target.1, speed),
    )
}

/// Pairs hunters with prey within `radius`, in ascending hunter id, and
/// removes the killed prey. Every hunter kills at most one prey and every
/// prey dies at most once.
pub fn resolve_kills(state: &mut SpatialState, radius: u32, step: usize) -> KillRecord {
    let mut taken = vec![false; state.prey.len()];
    let mut pairs = Vec::new();
    for hunter in &state.hunters {
        let best = state
            .prey
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, p)| (chebyshev(hunter.pos(), p.pos()), p.id, i))
            .filter(|&(d, _, _)| d <= radius)
            .min();
        if let Some((_, prey_id, i)) = best {
            taken[i] = true;
            pairs.push((hunter.id, prey_id));
        }
    }
    let record = KillRecord {
        step,
        pairs,
        hunters: state.hunters.len() as u64,
        prey: state.prey.len() as u64,
    };
    let mut i = 0;
    state.prey.retain(|_| {
        let keep = !taken[i];
        i += 1;
        keep
    });
    record
}

/// An agent model prepared for grid simulation.
pub struct SpatialSystem {
    agents: AgentSystem,
    config: SpatialConfig,
    hunter: usize,
    prey: usize,
    contact: Option<usize>,
    initial: Vec<u64>,
}

impl SpatialSystem {
    /// Uses the model's own `[spatial]` settings, or the defaults if it has none.
    pub fn new(model: &AgentModel) -> Result<Self, SimError> {
        let config = model.spatial.clone().unwrap_or_default();
        Self::with_config(model, config)
    }

    pub fn with_config(model: &AgentModel, config: SpatialConfig) -> Result<Self, SimError> {
        let mut model = model.clone();
        model.spatial = Some(config.clone());
        let agents = AgentSystem::new(&model)?;
        let hunter = model.class_index(&config.hunter).expect("validated hunter class");
        let prey = model.class_index(&config.prey).expect("validated prey class");
        if model.classes.len() != 2 {
            return Err(SimError::InvalidConfig(format!(
                "spatial runs need exactly the hunter and prey classes, model has {}",
                model.classes.len()
            )));
        }
        let contact = agents.behavior_index(&config.contact_behavior);
        for (i, name) in agents.behavior_names().enumerate() {
            if agents.is_transform(i) {
                return Err(SimError::InvalidConfig(format!(
                    "behavior `{name}`: transforms are not supported on the grid"
                )));
            }
        }
        let initial = model.classes.iter().map(|c| c.initial).collect();
        Ok(Self {
            agents,
            config,
            hunter,
            prey,
            contact,
            initial,
        })
    }

    pub fn config(&self) -> &SpatialConfig {
        &self.config
    }

    pub fn class_names(&self) -> &[String] {
        self.agents.class_names()
    }

    /// Initial state, with random placement drawn from `rng`.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> SpatialState {
        let cfg = &self.config;
        let place = |class: usize, rng: &mut R| -> Vec<(u32, u32)> {
            let name = &self.agents.class_names()[class];
            match cfg.placement {
                Placement::Explicit => cfg.positions.get(name).cloned().unwrap_or_default(),
                Placement::Random => (0..self.initial[class])
                    .map(|_| (rng.random_range(0..cfg.width), rng.random_range(0..cfg.height)))
                    .collect(),
            }
        };
        let hunters = place(self.hunter, rng);
        let prey = place(self.prey, rng);
        SpatialState::new(cfg.width, cfg.height, &hunters, &prey)
    }

    fn counts(&self, state: &SpatialState) -> Vec<u64> {
        let mut c = vec![0; 2];
        c[self.hunter] = state.hunters.len() as u64;
        c[self.prey] = state.prey.len() as u64;
        c
    }

    /// Advances the grid by one step and returns that step's kills.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut SpatialState,
        dt: f64,
        rng: &mut R,
        step: usize,
    ) -> Result<(KillRecord, Vec<u64>), SimError> {
        // (1) targeting and movement
        if self.config.speed > 0 {
            let targets: Vec<Option<(u32, u32)>> = state
                .hunters
                .iter()
                .map(|h| {
                    nearest_tumour_target(h.pos(), &state.prey)
                        .and_then(|id| state.prey.iter().find(|p| p.id == id))
                        .map(Agent::pos)
                })
                .collect();
            for (h, target) in state.hunters.iter_mut().zip(targets) {
                if let Some(t) = target {
                    let (x, y) = move_effector(h.pos(), t, self.config.speed);
                    h.x = x;
                    h.y = y;
                }
            }
        }

        // (2) contact kills
        let record = resolve_kills(state, self.config.kill_radius, step);

        // (3) remaining behaviours
        let counts = self.counts(state);
        let events = self.agents.sample_events(&counts, dt, rng, self.contact)?;
        let nb = events.fired.len();
        for i in 0..nb {
            // deaths only; signed removals happen with the inflows below
            if let (Some(class), None) = (self.agents.removal_class(i), self.agents.creation(i)) {
                self.remove_random(state, class, events.fired[i], rng);
            }
        }
        let survivors = [state_len(state, self, 0), state_len(state, self, 1)];
        for i in 0..nb {
            if let Some((target, per_firing, Some(parent_class))) = self.agents.creation(i) {
                let n = events.fired[i];
                if n == 0 {
                    continue;
                }
                let parents: Vec<(u32, u32)> = sample(rng, survivors[parent_class] as usize, n as usize)
                    .into_iter()
                    .map(|k| self.agents_of(state, parent_class)[k].pos())
                    .collect();
                for parent in parents {
                    for _ in 0..per_firing {
                        let pos = self.newborn_position(state, target, Some(parent), rng);
                        self.spawn(state, target, pos);
                    }
                }
            }
        }
        for i in 0..nb {
            if let Some((target, _, None)) = self.agents.creation(i) {
                for _ in 0..events.fired[i] {
                    let pos = self.newborn_position(state, target, None, rng);
                    self.spawn(state, target, pos);
                }
                if events.removed[i] > 0 {
                    self.remove_random(state, target, events.removed[i], rng);
                }
            }
        }
        state.clock += dt;
        let mut tallies = events.fired.clone();
        for (t, r) in tallies.iter_mut().zip(&events.removed) {
            *t += r;
        }
        if let Some(c) = self.contact {
            tallies[c] = record.kills();
        }
        Ok((record, tallies))
    }

    fn agents_of<'a>(&self, state: &'a SpatialState, class: usize) -> &'a Vec<Agent> {
        if class == self.hunter {
            &state.hunters
        } else {
            &state.prey
        }
    }

    fn agents_of_mut<'a>(&self, state: &'a mut SpatialState, class: usize) -> &'a mut Vec<Agent> {
        if class == self.hunter {
            &mut state.hunters
        } else {
            &mut state.prey
        }
    }

    fn remove_random<R: Rng + ?Sized>(&self, state: &mut SpatialState, class: usize, n: u64, rng: &mut R) {
        if n == 0 {
            return;
        }
        let agents = self.agents_of_mut(state, class);
        let n = (n as usize).min(agents.len());
        let doomed: BTreeSet<usize> = sample(rng, agents.len(), n).into_iter().collect();
        let mut i = 0;
        agents.retain(|_| {
            let keep = !doomed.contains(&i);
            i += 1;
            keep
        });
    }

    fn spawn(&self, state: &mut SpatialState, class: usize, (x, y): (u32, u32)) {
        let id = if class == self.hunter {
            state.next_hunter_id += 1;
            state.next_hunter_id - 1
        } else {
            state.next_prey_id += 1;
            state.next_prey_id - 1
        };
        self.agents_of_mut(state, class).push(Agent { id, x, y });
    }

    fn newborn_position<R: Rng + ?Sized>(
        &self,
        state: &SpatialState,
        class: usize,
        parent: Option<(u32, u32)>,
        rng: &mut R,
    ) -> (u32, u32) {
        let random = |rng: &mut R| {
            (
                rng.random_range(0..state.width),
                rng.random_range(0..state.height),
            )
        };
        match (self.config.newborn, parent) {
            (NewbornPlacement::Adjacent, Some((px, py))) => {
                let mut neighbours = Vec::with_capacity(8);
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (x, y) = (px as i64 + dx, py as i64 + dy);
                        if x >= 0 && y >= 0 && state.in_bounds((x as u32, y as u32)) {
                            neighbours.push((x as u32, y as u32));
                        }
                    }
                }
                let occupied = |p: (u32, u32)| self.agents_of(state, class).iter().any(|a| a.pos() == p);
                let free: Vec<(u32, u32)> = neighbours.iter().copied().filter(|&p| !occupied(p)).collect();
                let pool = if free.is_empty() { &neighbours } else { &free };
                if pool.is_empty() {
                    (px, py)
                } else {
                    pool[rng.random_range(0..pool.len())]
                }
            }
            _ => random(rng),
        }
    }

    /// One seeded grid run. When `dump` is given, every agent position is
    /// written after each step as CSV rows `step,class,id,x,y`.
    pub fn run(
        &self,
        config: &SimConfig,
        seed: u64,
        mut dump: Option<&mut dyn Write>,
    ) -> Result<ReplicationResult, SimError> {
        let wrap = |e: SimError| SimError::Replication {
            seed,
            source: Box::new(e),
        };
        let steps = config.steps().map_err(wrap)?;
        let mut rng = rng_from_seed(seed);
        let mut state = self.initial_state(&mut rng);
        let mut result = ReplicationResult::new(seed, self.class_names().to_vec(), steps);
        let names: Vec<String> = self.agents.behavior_names().map(str::to_string).collect();
        let mut tallies = vec![0u64; names.len()];
        result.record(0.0, &self.counts(&state));
        if let Some(w) = dump.as_deref_mut() {
            let _ = writeln!(w, "step,class,id,x,y");
            let _ = self.dump_positions(w, 0, &state);
        }
        for step in 0..steps {
            let (record, fired) = self.step(&mut state, config.dt, &mut rng, step).map_err(|e| {
                wrap(SimError::Step {
                    step,
                    source: Box::new(e),
                })
            })?;
            for (t, f) in tallies.iter_mut().zip(fired) {
                *t += f;
            }
            result.kills.push(record);
            result.record(config.time_at(step + 1), &self.counts(&state));
            if let Some(w) = dump.as_deref_mut() {
                let _ = self.dump_positions(w, step + 1, &state);
            }
        }
        result.tallies = names.into_iter().zip(tallies).collect();
        Ok(result)
    }

    fn dump_positions(&self, w: &mut dyn Write, step: usize, state: &SpatialState) -> io::Result<()> {
        let names = self.class_names();
        for (class, agents) in [(self.hunter, &state.hunters), (self.prey, &state.prey)] {
            for a in agents {
                writeln!(w, "{step},{},{},{},{}", names[class], a.id, a.x, a.y)?;
            }
        }
        Ok(())
    }
}

fn state_len(state: &SpatialState, system: &SpatialSystem, class: usize) -> u64 {
    system.agents_of(state, class).len() as u64
}

/// One step of the grid engine for callers holding a model rather than a
/// compiled system.
pub fn spatial_step<R: Rng + ?Sized>(
    model: &AgentModel,
    state: &mut SpatialState,
    dt: f64,
    rng: &mut R,
    config: &SpatialConfig,
    step: usize,
) -> Result<KillRecord, SimError> {
    let system = SpatialSystem::with_config(model, config.clone())?;
    system.step(state, dt, rng, step).map(|(record, _)| record)
}

pub fn run_spatial_replication(
    model: &AgentModel,
    config: &SimConfig,
    seed: u64,
) -> Result<ReplicationResult, SimError> {
    SpatialSystem::new(model)?.run(config, seed, None)
}

pub fn run_spatial_ensemble(
    model: &AgentModel,
    config: &SimConfig,
    n_reps: usize,
    base_seed: u64,
) -> Result<Ensemble, SimError> {
    let system = SpatialSystem::new(model)?;
    run_ensemble_with(system.class_names().to_vec(), n_reps, base_seed, |seed| {
        system.run(config, seed, None)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::conversion::sds_to_abs;
    use proptest::prelude::*;

    fn agent(id: u64, x: u32, y: u32) -> Agent {
        Agent { id, x, y }
    }

    #[test]
    fn targeting() {
        assert_eq!(nearest_tumour_target((5, 5), &[]), None);
        assert_eq!(nearest_tumour_target((5, 5), &[agent(7, 0, 0)]), Some(7));
        // both at Chebyshev distance 3
        let tumours = [agent(4, 8, 5), agent(2, 2, 7)];
        assert_eq!(nearest_tumour_target((5, 5), &tumours), Some(2));
    }

    #[test]
    fn movement() {
        assert_eq!(move_effector((3, 3), (3, 3), 2), (3, 3));
        assert_eq!(move_effector((0, 0), (5, 5), 1), (1, 1));
        assert_eq!(move_effector((0, 0), (3, 0), 5), (3, 0));
        assert_eq!(move_effector((9, 1), (2, 4), 2), (7, 3));
        assert_eq!(move_effector((9, 1), (2, 4), 0), (9, 1));
    }

    #[test]
    fn colocated_hunters_share_one_kill() {
        let mut s = SpatialState::new(10, 10, &[(4, 4), (4, 4), (4, 4)], &[(4, 4)]);
        let rec = resolve_kills(&mut s, 0, 0);
        assert_eq!(rec.pairs, vec![(0, 0)]);
        assert!(s.prey.is_empty());
    }

    #[test]
    fn no_hunters_no_kills() {
        let mut s = SpatialState::new(10, 10, &[], &[(1, 1), (2, 2)]);
        assert_eq!(resolve_kills(&mut s, 5, 0).kills(), 0);
        assert_eq!(s.prey.len(), 2);
    }

    #[test]
    fn cap_is_attained_with_adjacent_pairs() {
        let hunters: Vec<(u32, u32)> = (0..6).map(|i| (i * 3, 0)).collect();
        let prey: Vec<(u32, u32)> = (0..6).map(|i| (i * 3 + 1, 1)).collect();
        let mut s = SpatialState::new(20, 5, &hunters, &prey);
        let rec = resolve_kills(&mut s, 1, 0);
        assert_eq!(rec.kills(), 6);
        let mut hs: Vec<u64> = rec.pairs.iter().map(|p| p.0).collect();
        hs.dedup();
        assert_eq!(hs.len(), 6);
        assert!(s.prey.is_empty());
    }

    #[test]
    fn kill_prefers_nearest_then_lowest_id() {
        let mut s = SpatialState::new(10, 10, &[(5, 5)], &[(7, 5), (6, 6), (5, 3)]);
        let rec = resolve_kills(&mut s, 2, 0);
        assert_eq!(rec.pairs, vec![(0, 1)]);
    }

    fn kuz2_spatial() -> AgentModel {
        sds_to_abs(&bundled::stock_flow("kuz2-spatial").unwrap()).unwrap().model
    }

    #[test]
    fn idle_grid_without_prey_or_hazards() {
        let mut model = kuz2_spatial();
        for name in ["a", "b", "d", "g", "m", "p"] {
            model.parameters.set(name, 0.0);
        }
        model.parameters.set("g", 1.0);
        let system = SpatialSystem::new(&model).unwrap();
        let mut state = SpatialState::new(10, 10, &[(1, 2), (8, 8)], &[]);
        let before = state.clone();
        let mut rng = rng_from_seed(1);
        let (rec, _) = system.step(&mut state, 0.1, &mut rng, 0).unwrap();
        assert_eq!(rec.kills(), 0);
        assert_eq!(state.hunters, before.hunters);
    }

    #[test]
    fn stationary_target_is_approached_monotonically() {
        let mut model = kuz2_spatial();
        for name in ["a", "d", "m", "p"] {
            model.parameters.set(name, 0.0);
        }
        let mut cfg = model.spatial.clone().unwrap();
        cfg.kill_radius = 2;
        cfg.width = 50;
        cfg.height = 50;
        let system = SpatialSystem::with_config(&model, cfg).unwrap();
        let mut state = SpatialState::new(50, 50, &[(0, 0)], &[(40, 17)]);
        let mut rng = rng_from_seed(2);
        let mut last = chebyshev(state.hunters[0].pos(), (40, 17));
        for step in 0..100 {
            if last <= 2 {
                break;
            }
            system.step(&mut state, 0.1, &mut rng, step).unwrap();
            if state.prey.is_empty() {
                break;
            }
            let d = chebyshev(state.hunters[0].pos(), (40, 17));
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn runs_are_reproducible_and_dump_positions() {
        let model = kuz2_spatial();
        let system = SpatialSystem::new(&model).unwrap();
        let cfg = SimConfig::new(0.1, 2.0);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        let a = system.run(&cfg, 77, Some(&mut buf_a)).unwrap();
        let b = system.run(&cfg, 77, Some(&mut buf_b)).unwrap();
        assert_eq!(a, b);
        assert_eq!(buf_a, buf_b);
        let text = String::from_utf8(buf_a).unwrap();
        assert!(text.starts_with("step,class,id,x,y\n"));
        assert_eq!(a.kills.len(), 20);
    }

    #[test]
    fn adjacent_newborns_stay_next_to_parents() {
        let mut model = kuz2_spatial();
        let mut cfg = model.spatial.clone().unwrap();
        cfg.newborn = NewbornPlacement::Adjacent;
        cfg.placement = Placement::Explicit;
        cfg.positions.insert("T".into(), vec![(5, 5)]);
        cfg.positions.insert("E".into(), vec![]);
        cfg.width = 11;
        cfg.height = 11;
        model.classes.iter_mut().for_each(|c| c.initial = if c.name == "T" { 1 } else { 0 });
        model.parameters.set("a", 40.0);
        let system = SpatialSystem::with_config(&model, cfg).unwrap();
        let mut rng = rng_from_seed(3);
        let mut state = system.initial_state(&mut rng);
        system.step(&mut state, 0.1, &mut rng, 0).unwrap();
        // growth is a population inflow, so offspring land anywhere; the
        // parent-based rule applies to reproduction behaviours
        assert!(state.prey.iter().all(|p| state.in_bounds(p.pos())));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn kills_never_exceed_cap_and_positions_stay_on_grid(seed in any::<u64>(), radius in 0u32..3) {
            let model = kuz2_spatial();
            let mut cfg = model.spatial.clone().unwrap();
            cfg.width = 20;
            cfg.height = 20;
            cfg.kill_radius = radius;
            let system = SpatialSystem::with_config(&model, cfg).unwrap();
            let mut rng = rng_from_seed(seed);
            let mut state = system.initial_state(&mut rng);
            for step in 0..50 {
                let (rec, _) = system.step(&mut state, 0.1, &mut rng, step).unwrap();
                prop_assert!(rec.kills() <= rec.hunters.min(rec.prey));
                let hunters: BTreeSet<u64> = rec.pairs.iter().map(|p| p.0).collect();
                let prey: BTreeSet<u64> = rec.pairs.iter().map(|p| p.1).collect();
                prop_assert_eq!(hunters.len(), rec.pairs.len());
                prop_assert_eq!(prey.len(), rec.pairs.len());
                for a in state.hunters.iter().chain(&state.prey) {
                    prop_assert!(a.x < 20 && a.y < 20);
                }
            }
        }
    }
}
