//! Non-learning comparators: a greedy entropy-minus-distance sampling
//! planner and a uniform random walk over feasible neighbors.

use std::f64::consts::{E, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::SpaceTimePoint;
use crate::error::{invalid, Result};
use crate::mission::{Mission, MissionConfig, MissionMetrics, Scenario};
use crate::roadmap::{distance, LENGTH_EPS};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub n_initial_observations: usize,
    pub distance_weight: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_initial_observations: 100, distance_weight: 1.0 }
    }
}

/// Differential entropy of a Gaussian with the given variance.
pub fn gaussian_entropy(variance: f64) -> f64 {
    0.5 * (2.0 * PI * E * variance).ln()
}

/// Index maximizing `H(variance) - weight * distance(candidate, robot)`;
/// the lowest index wins ties.
pub fn select_target(variances: &[f64], candidates: &[[f64; 2]], robot: [f64; 2], weight: f64) -> Result<usize> {
    if candidates.is_empty() || variances.len() != candidates.len() {
        return Err(invalid("candidates", format!("{} candidates, {} variances", candidates.len(), variances.len())));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (v, c)) in variances.iter().zip(candidates).enumerate() {
        let score = gaussian_entropy(*v) - weight * distance(*c, robot);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

/// [`select_target`] with variances taken from the mission belief now.
pub fn entropy_minus_distance_target(mission: &Mission<'_>, candidates: &[usize], weight: f64) -> Result<usize> {
    let graph = mission.graph();
    let t = mission.time() as f64;
    let points: Vec<[f64; 2]> = candidates.iter().map(|&c| graph.nodes[c]).collect();
    let queries: Vec<_> = points.iter().map(|&p| SpaceTimePoint::new(p, t)).collect();
    let variances = mission.belief().variances(&queries);
    let robot = graph.nodes[mission.state().current_node];
    Ok(candidates[select_target(&variances, &points, robot, weight)?])
}

/// Seeds the belief with random observations, then repeatedly walks the
/// shortest path to the best-scoring reachable node, replanning on arrival.
pub fn run_sampling_baseline(
    scenario: &Scenario,
    mission_config: &MissionConfig,
    config: &BaselineConfig,
    run_seed: u64,
) -> Result<MissionMetrics> {
    let mut rng = seed::rng(run_seed);
    let mut mission = Mission::seeded(scenario, mission_config, config.n_initial_observations, &mut rng)?;
    'plan: while !mission.finished() {
        let current = mission.state().current_node;
        let remaining = mission.state().remaining_budget;
        let (from_current, _) = mission.graph().distances_from(current);
        let to_dest = mission.to_destination();
        let candidates: Vec<usize> = (0..mission.graph().len())
            .filter(|&c| c != current && from_current[c] + to_dest[c] <= remaining + LENGTH_EPS)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let target = entropy_minus_distance_target(&mission, &candidates, config.distance_weight)?;
        let path = mission.graph().shortest_path(current, target).expect("candidate is reachable");
        for node in path {
            if mission.finished() {
                break 'plan;
            }
            mission.step(node)?;
        }
    }
    mission.metrics()
}

/// Uniformly random feasible neighbor at every decision.
pub fn run_random_policy(scenario: &Scenario, mission_config: &MissionConfig, run_seed: u64) -> Result<MissionMetrics> {
    let mut rng = seed::rng(run_seed);
    let mut mission = Mission::new(scenario, mission_config)?;
    while !mission.finished() {
        let feasible: Vec<usize> = mission
            .feasible()
            .iter()
            .zip(mission.neighbors())
            .filter(|(ok, _)| **ok)
            .map(|(_, &n)| n)
            .collect();
        let target = feasible[rng.gen_range(0..feasible.len())];
        mission.step(target)?;
    }
    mission.metrics()
}
