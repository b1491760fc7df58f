use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, KernelParams, Observation};
use crate::dpm::{DpmHidden, LATENT_DIM};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::policy::{act, ActionMode, DecisionInput, PolicyHidden};
use crate::roadmap::{augment, RoadmapGraph};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub passes: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
}

/// Wall-clock of greedy decision passes (DPM encode, graph encode, decode,
/// action choice) on a random `nodes`/`k` roadmap. Belief bookkeeping is
/// done once up front and not timed.
pub fn decision_latency(model: &Model, nodes: usize, k: usize, passes: usize, run_seed: u64) -> Result<LatencyReport> {
    if passes == 0 {
        return Err(invalid("passes", "must be >= 1"));
    }
    let graph = RoadmapGraph::build(nodes, k, run_seed)?;
    let obs: Vec<Observation> = graph.nodes[..nodes.min(10)]
        .iter()
        .enumerate()
        .map(|(i, &p)| Observation { location: p, time: 0.0, value: (i as f64 * 0.1).min(1.0) })
        .collect();
    let belief = BeliefState::fit(KernelParams::default(), model.config.resolution, obs)?;
    let features: Vec<[f64; 4]> = augment(&graph, &belief, 1.0).iter().map(|n| n.features()).collect();
    let grid = belief.belief_grid(model.config.resolution, 1.0)?.channels();
    let input = DecisionInput {
        current: 0,
        neighbors: graph.adjacency[0].clone(),
        mask: vec![true; k],
        budget_fraction: 0.5,
        z: vec![0.0; LATENT_DIM],
        hidden: PolicyHidden::zeros(model.config.embedding),
    };
    let mut rng = seed::rng(run_seed);
    let mut times = Vec::with_capacity(passes);
    for _ in 0..passes {
        let started = Instant::now();
        let (z, _) = model.dpm.encode_values(&model.params, &grid, &DpmHidden::default())?;
        let mut inp = input.clone();
        if model.config.use_latent {
            inp.z = z;
        }
        let decision = model.policy.forward(&model.params, &features, &inp)?;
        std::hint::black_box(act(&decision.probs, ActionMode::Greedy, &mut rng));
        times.push(started.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = if passes % 2 == 1 { times[passes / 2] } else { 0.5 * (times[passes / 2 - 1] + times[passes / 2]) };
    Ok(LatencyReport { passes, median_seconds: median, min_seconds: times[0], max_seconds: times[passes - 1] })
}
