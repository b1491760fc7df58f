//! One monitoring episode: a roadmap, a simulated fire, the GP belief and
//! the agent's planning state, advanced one decision at a time.
//!
//! Time model: the belief lattice sits at the decision index `t`. Moving
//! along an edge takes one fire step, so measurements taken during decision
//! `t` are stamped `t + 1` and read from frame `t + 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, KernelParams, Observation};
use crate::error::{invalid, Result};
use crate::firesim::{sample_environment, EnvCharacteristics, GroundTruthField, RandomizationSpec};
use crate::roadmap::{feasible_mask, traverse, PlanningState, RoadmapGraph};
use crate::seed;

/// Relative uncertainty reduction `(prev - new) / prev`.
pub fn reward(trace_prev: f64, trace_new: f64) -> Result<f64> {
    if !(trace_prev > 0.0) {
        return Err(invalid("trace_prev", format!("must be > 0, got {trace_prev}")));
    }
    Ok((trace_prev - trace_new) / trace_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub interval: f64,
    pub max_steps: usize,
    pub resolution: usize,
    pub kernel: KernelParams,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self { interval: 0.2, max_steps: 256, resolution: 30, kernel: KernelParams::default() }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(invalid("interval", "must be > 0"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be >= 1"));
        }
        if self.resolution < 2 {
            return Err(invalid("resolution", "must be >= 2"));
        }
        self.kernel.validate()
    }
}

/// Graph, environment, endpoints and budget of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: RoadmapGraph,
    pub env: EnvCharacteristics,
    pub start: usize,
    pub destination: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub nodes: usize,
    pub k: usize,
    pub budget_min: f64,
    pub budget_max: f64,
    pub randomization: RandomizationSpec,
}

const MAX_RESAMPLES: u64 = 64;

impl Scenario {
    /// Samples a graph, environment, endpoints and budget from `seed`.
    /// Draws whose destination is unreachable from the start are resampled.
    pub fn sample(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        spec.randomization.validate()?;
        if spec.budget_min < 0.0 || spec.budget_max < spec.budget_min {
            return Err(invalid("budget", format!("range [{}, {}]", spec.budget_min, spec.budget_max)));
        }
        let mut rng = seed::rng(seed);
        let env = sample_environment(&mut rng, &spec.randomization)?;
        let budget = if spec.budget_max > spec.budget_min { rng.gen_range(spec.budget_min..=spec.budget_max) } else { spec.budget_min };
        let mut last = None;
        for attempt in 0..MAX_RESAMPLES {
            let graph = RoadmapGraph::build(spec.nodes, spec.k, seed::derive(seed, attempt))?;
            let start = graph.nearest_node([rng.gen(), rng.gen()]);
            let destination = graph.nearest_node([rng.gen(), rng.gen()]);
            let reachable = graph.distances_to(destination)[start].is_finite();
            let scenario = Self { graph, env: env.clone(), start, destination, budget };
            if reachable {
                return Ok(scenario);
            }
            last = Some(scenario);
        }
        Err(crate::Error::Degenerate(format!(
            "no reachable destination after {MAX_RESAMPLES} graphs (last: {:?})",
            last.map(|s| (s.start, s.destination))
        )))
    }
}

/// Bookkeeping of one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub target: usize,
    /// Observation count before this decision's measurements.
    pub prior_observations: usize,
    pub measurements: usize,
    /// Lattice traces at the post-move time without and with the new
    /// measurements.
    pub trace_before: f64,
    pub trace_after: f64,
    pub reward: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionMetrics {
    pub env: EnvCharacteristics,
    pub budget: f64,
    pub decisions: usize,
    pub travelled: f64,
    pub final_trace: f64,
    /// Trace at the final time of the belief holding only the episode's
    /// starting observations.
    pub reference_trace: f64,
    pub mean_rmse: f64,
    pub rmse_series: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mission<'g> {
    graph: &'g RoadmapGraph,
    field: GroundTruthField,
    config: MissionConfig,
    initial: BeliefState,
    belief: BeliefState,
    state: PlanningState,
    destination: usize,
    to_destination: Vec<f64>,
    budget: f64,
    time: usize,
    rmse_series: Vec<f64>,
}

impl<'g> Mission<'g> {
    /// Starts an episode with one measurement at the start node.
    pub fn new(scenario: &'g Scenario, config: &MissionConfig) -> Result<Self> {
        let mut mission = Self::unmeasured(scenario, config)?;
        let start = scenario.graph.nodes[scenario.start];
        let value = mission.field.intensity_at(start, 0)?;
        mission.belief = mission.belief.update(Observation { location: start, time: 0.0, value })?;
        mission.initial = mission.belief.clone();
        Ok(mission)
    }

    /// Starts an episode with `count` measurements at uniform random
    /// locations at time 0 instead of the start-node measurement.
    pub fn seeded<R: Rng + ?Sized>(scenario: &'g Scenario, config: &MissionConfig, count: usize, rng: &mut R) -> Result<Self> {
        let mut mission = Self::unmeasured(scenario, config)?;
        let mut obs = Vec::with_capacity(count);
        for _ in 0..count {
            let p = [rng.gen::<f64>(), rng.gen::<f64>()];
            obs.push(Observation { location: p, time: 0.0, value: mission.field.intensity_at(p, 0)? });
        }
        mission.belief = mission.belief.update_many(&obs)?;
        mission.initial = mission.belief.clone();
        Ok(mission)
    }

    fn unmeasured(scenario: &'g Scenario, config: &MissionConfig) -> Result<Self> {
        config.validate()?;
        if scenario.budget < 0.0 {
            return Err(invalid("budget", "must be >= 0"));
        }
        let field = GroundTruthField::simulate(&scenario.env, config.resolution, config.max_steps + 1)?;
        let belief = BeliefState::new(config.kernel, config.resolution)?;
        Ok(Self {
            graph: &scenario.graph,
            field,
            config: config.clone(),
            initial: belief.clone(),
            belief,
            state: PlanningState::start(scenario.start, scenario.budget),
            destination: scenario.destination,
            to_destination: scenario.graph.distances_to(scenario.destination),
            budget: scenario.budget,
            time: 0,
            rmse_series: Vec::new(),
        })
    }

    pub fn graph(&self) -> &RoadmapGraph {
        self.graph
    }

    pub fn field(&self) -> &GroundTruthField {
        &self.field
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn initial_belief(&self) -> &BeliefState {
        &self.initial
    }

    pub fn state(&self) -> &PlanningState {
        &self.state
    }

    pub fn config(&self) -> &MissionConfig {
        &self.config
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn destination(&self) -> usize {
        self.destination
    }

    pub fn to_destination(&self) -> &[f64] {
        &self.to_destination
    }

    pub fn initial_budget(&self) -> f64 {
        self.budget
    }

    pub fn budget_fraction(&self) -> f64 {
        if self.budget > 0.0 {
            (self.state.remaining_budget / self.budget).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.graph.adjacency[self.state.current_node]
    }

    pub fn feasible(&self) -> Vec<bool> {
        feasible_mask(self.graph, &self.state, &self.to_destination)
    }

    /// True once the step cap is reached or no neighbor is feasible.
    pub fn finished(&self) -> bool {
        self.time >= self.config.max_steps || !self.feasible().iter().any(|m| *m)
    }

    /// Moves to neighbor `target`, measures along the edge and updates the
    /// belief.
    pub fn step(&mut self, target: usize) -> Result<StepOutcome> {
        let (state, points) = traverse(&self.state, self.graph, target, self.config.interval)?;
        let t = self.time + 1;
        let mut obs = Vec::with_capacity(points.len());
        for p in &points {
            obs.push(Observation { location: *p, time: t as f64, value: self.field.intensity_at(*p, t)? });
        }
        let prior_observations = self.belief.observations().len();
        let mut belief = if obs.is_empty() { self.belief.clone() } else { self.belief.update_many(&obs)? };
        belief.set_time(t as f64);
        let (trace_before, trace_after) = belief.trace_with_prefix(prior_observations);
        let rmse = belief.rmse(&self.field, t)?;
        self.belief = belief;
        self.state = state;
        self.time = t;
        self.rmse_series.push(rmse);
        Ok(StepOutcome {
            target,
            prior_observations,
            measurements: obs.len(),
            trace_before,
            trace_after,
            reward: reward(trace_before, trace_after)?,
            rmse,
        })
    }

    pub fn metrics(&self) -> Result<MissionMetrics> {
        let rmse_series = if self.rmse_series.is_empty() {
            vec![self.belief.rmse(&self.field, self.time)?]
        } else {
            self.rmse_series.clone()
        };
        let mean_rmse = rmse_series.iter().sum::<f64>() / rmse_series.len() as f64;
        Ok(MissionMetrics {
            env: self.field.characteristics.clone(),
            budget: self.budget,
            decisions: self.rmse_series.len(),
            travelled: self.state.travelled(self.graph),
            final_trace: self.belief.covariance_trace(),
            reference_trace: self.initial.at_time(self.time as f64).covariance_trace(),
            mean_rmse,
            rmse_series,
        })
    }
}
