//! Deterministic stock-and-flow integration.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::expr::BoundExpr;
use crate::model::{validate_stock_flow, StockFlowModel};

/// Default SDS step, in days.
pub const DEFAULT_SDS_DT: f64 = 0.01;
/// Default steady-state window, in days.
pub const DEFAULT_STEADY_WINDOW: f64 = 10.0;
pub const DEFAULT_STEADY_REL_TOL: f64 = 1e-3;
/// Stocks whose magnitude stays below this are compared absolutely.
pub const STEADY_ABS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Step length in days.
    pub dt: f64,
    /// Simulated period in days.
    pub horizon: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_clamp")]
    pub nonneg_clamp: bool,
}

fn default_clamp() -> bool {
    true
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            method: Method::Rk4,
            nonneg_clamp: true,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.nonneg_clamp = clamp;
        self
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> Result<usize, SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "horizon must be non-negative, got {}",
                self.horizon
            )));
        }
        if self.horizon == 0.0 {
            return Ok(0);
        }
        if self.dt > self.horizon {
            return Err(SimError::InvalidConfig(format!(
                "dt {} exceeds horizon {}",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) {
            return Err(SimError::InvalidConfig(format!(
                "horizon {} is not a whole number of steps of {}",
                self.horizon, self.dt
            )));
        }
        Ok(steps as usize)
    }

    /// Grid point `i`, computed by multiplication so it does not drift.
    pub fn time_at(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }
}

/// Time-indexed values of named series on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// One series per name, each as long as `times`.
    pub series: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Self {
        let series = vec![Vec::new(); names.len()];
        Self {
            times: Vec::new(),
            names,
            series,
        }
    }

    pub fn push(&mut self, t: f64, values: &[f64]) {
        self.times.push(t);
        for (s, &v) in self.series.iter_mut().zip(values) {
            s.push(v);
        }
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.series[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_value(&self, name: &str) -> Option<f64> {
        self.series(name).and_then(|s| s.last().copied())
    }
}

struct CompiledFlow {
    name: String,
    source: Option<usize>,
    sink: Option<usize>,
    rate: BoundExpr,
}

/// A validated stock-flow model compiled for fast repeated evaluation.
///
/// State vectors are ordered as `model.stocks`.
pub struct StockFlowSystem {
    stock_names: Vec<String>,
    params: Vec<f64>,
    flows: Vec<CompiledFlow>,
}

impl StockFlowSystem {
    pub fn new(model: &StockFlowModel) -> Result<Self, SimError> {
        let diags = validate_stock_flow(model);
        if !diags.is_empty() {
            return Err(SimError::InvalidModel(diags));
        }
        let stock_names: Vec<String> = model.stocks.iter().map(|s| s.name.clone()).collect();
        let param_names: Vec<&str> = model.parameters.names().collect();
        let params: Vec<f64> = param_names
            .iter()
            .map(|n| model.parameters.get(n).unwrap())
            .collect();
        let n = stock_names.len();
        let resolve = |name: &str| {
            stock_names
                .iter()
                .position(|s| s == name)
                .or_else(|| param_names.iter().position(|&p| p == name).map(|i| n + i))
        };
        let index = |s: Option<&str>| s.and_then(|s| stock_names.iter().position(|x| x == s));
        let mut flows = Vec::with_capacity(model.flows.len());
        for f in &model.flows {
            flows.push(CompiledFlow {
                name: f.name.clone(),
                source: index(f.source.stock()),
                sink: index(f.sink.stock()),
                rate: f.rate.bind(&resolve).map_err(|source| SimError::Flow {
                    flow: f.name.clone(),
                    source,
                })?,
            });
        }
        Ok(Self {
            stock_names,
            params,
            flows,
        })
    }

    pub fn stock_names(&self) -> &[String] {
        &self.stock_names
    }

    pub fn initial_state(model: &StockFlowModel) -> Vec<f64> {
        model.stocks.iter().map(|s| s.initial).collect()
    }

    /// Net rate of change per stock: inflows minus outflows.
    pub fn derivative(&self, state: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut slots = Vec::with_capacity(state.len() + self.params.len());
        slots.extend_from_slice(state);
        slots.extend_from_slice(&self.params);
        let mut out = vec![0.0; state.len()];
        for flow in &self.flows {
            let rate = flow.rate.eval(&slots).map_err(|source| SimError::Flow {
                flow: flow.name.clone(),
                source,
            })?;
            if let Some(i) = flow.source {
                out[i] -= rate;
            }
            if let Some(i) = flow.sink {
                out[i] += rate;
            }
        }
        Ok(out)
    }

    /// Rate of every flow at `state`, in model order.
    pub fn flow_rates(&self, state: &[f64]) -> Result<Vec<(String, f64)>, SimError> {
        let mut slots = state.to_vec();
        slots.extend_from_slice(&self.params);
        self.flows
            .iter()
            .map(|f| {
                f.rate
                    .eval(&slots)
                    .map(|r| (f.name.clone(), r))
                    .map_err(|source| SimError::Flow {
                        flow: f.name.clone(),
                        source,
                    })
            })
            .collect()
    }

    fn finish(&self, mut next: Vec<f64>, clamp: bool) -> Result<Vec<f64>, SimError> {
        for (i, v) in next.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(SimError::NonFinite {
                    stock: self.stock_names[i].clone(),
                });
            }
            if clamp && *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(next)
    }

    pub fn euler_step(&self, state: &[f64], dt: f64, clamp: bool) -> Result<Vec<f64>, SimError> {
        let k = self.derivative(state)?;
        let next = state.iter().zip(&k).map(|(s, d)| s + dt * d).collect();
        self.finish(next, clamp)
    }

    pub fn rk4_step(&self, state: &[f64], dt: f64, clamp: bool) -> Result<Vec<f64>, SimError> {
        let offset = |k: &[f64], h: f64| -> Vec<f64> {
            state.iter().zip(k).map(|(s, d)| s + h * d).collect()
        };
        let k1 = self.derivative(state)?;
        let k2 = self.derivative(&offset(&k1, dt / 2.0))?;
        let k3 = self.derivative(&offset(&k2, dt / 2.0))?;
        let k4 = self.derivative(&offset(&k3, dt))?;
        let next = (0..state.len())
            .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        self.finish(next, clamp)
    }

    pub fn step(&self, state: &[f64], config: &SimConfig) -> Result<Vec<f64>, SimError> {
        match config.method {
            Method::Euler => self.euler_step(state, config.dt, config.nonneg_clamp),
            Method::Rk4 => self.rk4_step(state, config.dt, config.nonneg_clamp),
        }
    }

    pub fn integrate_from(&self, initial: &[f64], config: &SimConfig) -> Result<Trajectory, SimError> {
        let steps = config.steps()?;
        let mut traj = Trajectory::new(self.stock_names.clone());
        let mut state = initial.to_vec();
        traj.push(0.0, &state);
        for step in 0..steps {
            state = self.step(&state, config).map_err(|e| SimError::Step {
                step,
                source: Box::new(e),
            })?;
            traj.push(config.time_at(step + 1), &state);
        }
        Ok(traj)
    }
}

fn to_vector(system: &StockFlowSystem, state: &BTreeMap<String, f64>) -> Result<Vec<f64>, SimError> {
    system
        .stock_names
        .iter()
        .map(|n| {
            state
                .get(n)
                .copied()
                .ok_or_else(|| SimError::InvalidConfig(format!("state is missing stock `{n}`")))
        })
        .collect()
}

fn to_map(system: &StockFlowSystem, values: Vec<f64>) -> BTreeMap<String, f64> {
    system.stock_names.iter().cloned().zip(values).collect()
}

/// dS/dt for every stock at `state`.
pub fn derivative_eval(
    model: &StockFlowModel,
    state: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, SimError> {
    let system = StockFlowSystem::new(model)?;
    let d = system.derivative(&to_vector(&system, state)?)?;
    Ok(to_map(&system, d))
}

pub fn euler_step(
    model: &StockFlowModel,
    state: &BTreeMap<String, f64>,
    dt: f64,
    nonneg_clamp: bool,
) -> Result<BTreeMap<String, f64>, SimError> {
    let system = StockFlowSystem::new(model)?;
    let next = system.euler_step(&to_vector(&system, state)?, dt, nonneg_clamp)?;
    Ok(to_map(&system, next))
}

pub fn rk4_step(
    model: &StockFlowModel,
    state: &BTreeMap<String, f64>,
    dt: f64,
    nonneg_clamp: bool,
) -> Result<BTreeMap<String, f64>, SimError> {
    let system = StockFlowSystem::new(model)?;
    let next = system.rk4_step(&to_vector(&system, state)?, dt, nonneg_clamp)?;
    Ok(to_map(&system, next))
}

/// Integrates the model from its declared initial stocks.
pub fn integrate(model: &StockFlowModel, config: &SimConfig) -> Result<Trajectory, SimError> {
    let system = StockFlowSystem::new(model)?;
    system.integrate_from(&StockFlowSystem::initial_state(model), config)
}

/// Earliest time after which every series varies by less than `rel_tol`
/// (relative to its largest magnitude in the window) over `window` days.
///
/// Series whose magnitude stays under [`STEADY_ABS_FLOOR`] are compared in
/// absolute terms. Returns `None` if the condition never holds.
pub fn detect_steady_state(traj: &Trajectory, window: f64, rel_tol: f64) -> Option<f64> {
    if traj.times.len() < 2 {
        return traj.times.first().copied().filter(|_| window <= 0.0);
    }
    let dt = traj.times[1] - traj.times[0];
    let horizon = traj.times[traj.times.len() - 1] - traj.times[0];
    if window >= horizon || dt <= 0.0 {
        return None;
    }
    let width = (window / dt).round() as usize;
    let n_windows = traj.times.len() - width;
    let mut steady = vec![true; n_windows];
    for series in &traj.series {
        for (start, ok) in window_extents(series, width).into_iter().enumerate() {
            let (lo, hi, mag) = ok;
            let change = hi - lo;
            let pass = if mag < STEADY_ABS_FLOOR {
                change < rel_tol
            } else {
                change / mag < rel_tol
            };
            steady[start] &= pass;
        }
    }
    steady.iter().position(|&s| s).map(|i| traj.times[i])
}

/// (min, max, max |x|) over every window of `width + 1` consecutive points.
fn window_extents(series: &[f64], width: usize) -> Vec<(f64, f64, f64)> {
    let n_windows = series.len() - width;
    let mut out = Vec::with_capacity(n_windows);
    let mut max_q: VecDeque<usize> = VecDeque::new();
    let mut min_q: VecDeque<usize> = VecDeque::new();
    for i in 0..series.len() {
        while max_q.back().is_some_and(|&j| series[j] <= series[i]) {
            max_q.pop_back();
        }
        max_q.push_back(i);
        while min_q.back().is_some_and(|&j| series[j] >= series[i]) {
            min_q.pop_back();
        }
        min_q.push_back(i);
        if i >= width {
            let start = i - width;
            while max_q.front().is_some_and(|&j| j < start) {
                max_q.pop_front();
            }
            while min_q.front().is_some_and(|&j| j < start) {
                min_q.pop_front();
            }
            let hi = series[*max_q.front().unwrap()];
            let lo = series[*min_q.front().unwrap()];
            out.push((lo, hi, hi.abs().max(lo.abs())));
        }
    }
    out
}
