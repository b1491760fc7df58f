//! Episode rollouts, generalized advantage estimation and PPO updates with
//! the DPM loss folded in.

use std::hash::{Hash, Hasher};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, DecayClock, Graph, ParamTree, Tensor, Var};
use crate::belief::KernelParams;
use crate::dpm::{dpm_loss, mse, target_for_mode, DpmHidden, LATENT_DIM};
use crate::error::{invalid, Error, Result};
use crate::firesim::RandomizationSpec;
use crate::mission::{Mission, MissionConfig, MissionMetrics, Scenario, ScenarioSpec, StepOutcome};
use crate::model::{Model, ModelConfig};
use crate::policy::{act, ActionMode, DecisionInput, PolicyHidden};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub nodes: usize,
    pub k: usize,
    pub budget_min: f64,
    pub budget_max: f64,
    pub fuel_min: f64,
    pub fuel_max: f64,
    pub wind_speed: f64,
    pub fire_count_min: u32,
    pub fire_count_max: u32,
    pub ignition_horizon: u32,
    pub interval: f64,
    pub max_steps: usize,
    pub kernel: KernelParams,
    pub model: ModelConfig,
    pub episodes: usize,
    pub batch_size: usize,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    /// With `decay_clock = "tick"` the schedule advances once per PPO update
    /// instead of once per optimizer step.
    pub adam: AdamConfig,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub dpm_weight: f64,
    pub max_grad_norm: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            k: 20,
            budget_min: 7.0,
            budget_max: 9.0,
            fuel_min: 1.0,
            fuel_max: 10.0,
            wind_speed: 5.0,
            fire_count_min: 1,
            fire_count_max: 3,
            ignition_horizon: 32,
            interval: 0.2,
            max_steps: 256,
            kernel: KernelParams::default(),
            model: ModelConfig::default(),
            episodes: 3200,
            batch_size: 32,
            ppo_epochs: 8,
            minibatch_size: 256,
            adam: AdamConfig::default(),
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            dpm_weight: 1.0,
            max_grad_norm: 1.0,
            workers: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: 50 nodes, 10 neighbors, 8x8 grids, width 16.
    pub fn toy() -> Self {
        Self {
            nodes: 50,
            k: 10,
            model: ModelConfig::toy(),
            episodes: 2000,
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            workers: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.ppo_epochs == 0 {
            return Err(invalid("batch_size", "batch, minibatch and epoch counts must be >= 1"));
        }
        if self.k == 0 || self.k >= self.nodes {
            return Err(invalid("k", format!("need 1 <= k < nodes, got k={} nodes={}", self.k, self.nodes)));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid("gamma", "gamma and lambda must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(invalid("clip", "clip and max_grad_norm must be > 0"));
        }
        self.adam.validate()?;
        self.scenario_spec().randomization.validate()?;
        self.mission_config().validate()?;
        Ok(())
    }

    pub fn randomization(&self) -> RandomizationSpec {
        RandomizationSpec {
            fuel_min: self.fuel_min,
            fuel_max: self.fuel_max,
            wind_speed: self.wind_speed,
            fire_count_min: self.fire_count_min,
            fire_count_max: self.fire_count_max,
            ignition_horizon: self.ignition_horizon,
        }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            nodes: self.nodes,
            k: self.k,
            budget_min: self.budget_min,
            budget_max: self.budget_max,
            randomization: self.randomization(),
        }
    }

    pub fn mission_config(&self) -> MissionConfig {
        MissionConfig {
            interval: self.interval,
            max_steps: self.max_steps,
            resolution: self.model.resolution,
            kernel: self.kernel,
        }
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        seed::derive(self.seed, episode as u64)
    }
}

/// Everything needed to replay one decision during the update.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub features: Vec<[f64; 4]>,
    pub input: DecisionInput,
    /// Chosen neighbor slot.
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub outcome: StepOutcome,
    pub dpm_grid: Vec<f64>,
    pub dpm_hidden: DpmHidden,
    pub dpm_target: Vec<f64>,
    /// Decoder error of the rollout-time latent.
    pub dpm_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBuffer {
    pub episode: usize,
    pub seed: u64,
    pub records: Vec<DecisionRecord>,
    pub initial_trace: f64,
    pub metrics: MissionMetrics,
    /// DPM latent after encoding the final belief.
    pub final_latent: Vec<f64>,
    /// Mean wall-clock seconds per decision (not part of equality checks
    /// downstream; see [`EpisodeBuffer::digest`]).
    pub seconds_per_decision: f64,
}

impl EpisodeBuffer {
    pub fn episode_return(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn mean_dpm_loss(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.dpm_loss).sum::<f64>() / self.records.len() as f64
    }

    /// Hash of every recorded value except timings.
    pub fn digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut f = |v: f64| v.to_bits().hash(&mut h);
        for r in &self.records {
            r.features.iter().flatten().for_each(|v| f(*v));
            r.input.z.iter().for_each(|v| f(*v));
            r.input.hidden.h.data.iter().for_each(|v| f(*v));
            f(r.action as f64);
            f(r.log_prob);
            f(r.value);
            f(r.reward);
            f(r.outcome.trace_before);
            f(r.outcome.trace_after);
            r.dpm_grid.iter().for_each(|v| f(*v));
            r.dpm_target.iter().for_each(|v| f(*v));
        }
        f(self.metrics.final_trace);
        f(self.metrics.mean_rmse);
        self.final_latent.iter().for_each(|v| f(*v));
        self.seed.hash(&mut h);
        h.finish()
    }
}

/// Runs one episode of `model` in `scenario`, recording every decision.
pub fn rollout_episode(
    model: &Model,
    scenario: &Scenario,
    config: &MissionConfig,
    mode: ActionMode,
    action_seed: u64,
) -> Result<EpisodeBuffer> {
    let mut mission = Mission::new(scenario, config)?;
    run_policy(model, &mut mission, mode, action_seed)
}

/// Drives an already-started mission with the learned policy.
pub fn run_policy(model: &Model, mission: &mut Mission<'_>, mode: ActionMode, action_seed: u64) -> Result<EpisodeBuffer> {
    let mut rng = seed::rng(action_seed);
    let r = model.config.resolution;
    let d = model.config.embedding;
    let mut policy_hidden = PolicyHidden::zeros(d);
    let mut dpm_hidden = DpmHidden::default();
    let mut records = Vec::new();
    let initial_trace = mission.belief().covariance_trace();
    let started = Instant::now();
    while !mission.finished() {
        let t = mission.time() as f64;
        let features: Vec<[f64; 4]> =
            crate::roadmap::augment(mission.graph(), mission.belief(), t).iter().map(|n| n.features()).collect();
        let grid = mission.belief().belief_grid(r, t)?;
        let channels = grid.channels();
        let (z, next_dpm) = model.dpm.encode_values(&model.params, &channels, &dpm_hidden)?;
        let input = DecisionInput {
            current: mission.state().current_node,
            neighbors: mission.neighbors().to_vec(),
            mask: mission.feasible(),
            budget_fraction: mission.budget_fraction(),
            z: if model.config.use_latent { z.clone() } else { vec![0.0; LATENT_DIM] },
            hidden: policy_hidden.clone(),
        };
        let decision = model.policy.forward(&model.params, &features, &input)?;
        let action = act(&decision.probs, mode, &mut rng);
        let outcome = mission.step(input.neighbors[action])?;
        let next_grid = mission.belief().belief_grid(r, mission.time() as f64)?;
        let dpm_target = target_for_mode(model.config.mode, &grid, &next_grid)?;
        let predicted = model.dpm.decode_values(&model.params, &z)?;
        records.push(DecisionRecord {
            features,
            action,
            log_prob: decision.log_probs[action],
            value: decision.value,
            reward: outcome.reward,
            outcome,
            dpm_loss: mse(&predicted, &dpm_target)?,
            dpm_grid: channels,
            dpm_hidden: std::mem::replace(&mut dpm_hidden, next_dpm),
            dpm_target,
            input,
        });
        policy_hidden = decision.hidden;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let final_grid = mission.belief().belief_grid(r, mission.time() as f64)?;
    let (final_latent, _) = model.dpm.encode_values(&model.params, &final_grid.channels(), &dpm_hidden)?;
    Ok(EpisodeBuffer {
        episode: 0,
        seed: action_seed,
        seconds_per_decision: if records.is_empty() { 0.0 } else { elapsed / records.len() as f64 },
        records,
        initial_trace,
        metrics: mission.metrics()?,
        final_latent,
    })
}

/// GAE(γ, λ) with a terminal value of zero after the last step. Returns
/// advantages and returns (`advantages + values`).
pub fn compute_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts to zero mean and scales to unit variance (centering only when the
/// spread is negligible).
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = if std > 1e-8 { (*v - mean) / std } else { *v - mean };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub dpm_weight: f64,
    pub max_grad_norm: f64,
}

impl From<&TrainConfig> for PpoConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            epochs: c.ppo_epochs,
            minibatch_size: c.minibatch_size,
            clip: c.clip,
            gamma: c.gamma,
            lambda: c.lambda,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            dpm_weight: c.dpm_weight,
            max_grad_norm: c.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub samples: usize,
    pub optimizer_steps: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub dpm_loss: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct SampleTerms {
    surrogate: f64,
    unclipped: f64,
    value_loss: f64,
    entropy: f64,
    dpm_loss: f64,
    clipped: bool,
}

fn scalar_const(g: &mut Graph<'_>, v: f64) -> Var {
    g.constant(Tensor::scalar(v))
}

/// Loss of one decision record and the values of its terms.
fn sample_loss(
    g: &mut Graph<'_>,
    model: &Model,
    rec: &DecisionRecord,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
) -> Result<(Var, SampleTerms)> {
    let emb = model.policy.encode_graph(g, &rec.features)?;
    let out = model.policy.decide(g, emb, &rec.input)?;
    let lp = g.slice_cols(out.log_probs, rec.action, 1)?;
    let lp = g.sum(lp);
    let shifted = g.offset(lp, -rec.log_prob);
    let ratio = g.exp(shifted);
    let s1 = g.scale(ratio, advantage);
    let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s2 = g.scale(clipped, advantage);
    let surrogate = g.min(s1, s2)?;

    let value = g.sum(out.value);
    let target = scalar_const(g, ret);
    let diff = g.sub(value, target)?;
    let value_loss = g.square(diff);

    let plogp = g.mul(out.probs, out.log_probs)?;
    let neg_entropy = g.sum(plogp);

    let h = g.constant(rec.dpm_hidden.h.clone());
    let c = g.constant(rec.dpm_hidden.c.clone());
    let (z, _, _) = model.dpm.encode(g, &rec.dpm_grid, h, c)?;
    let pred = model.dpm.decode(g, z)?;
    let l_dpm = dpm_loss(g, pred, &rec.dpm_target)?;

    let pg = g.scale(surrogate, -1.0);
    let vl = g.scale(value_loss, cfg.value_coef);
    let el = g.scale(neg_entropy, cfg.entropy_coef);
    let dl = g.scale(l_dpm, cfg.dpm_weight);
    let a = g.add(pg, vl)?;
    let b = g.add(el, dl)?;
    let loss = g.add(a, b)?;

    let r = g.scalar(ratio);
    let terms = SampleTerms {
        surrogate: g.scalar(surrogate),
        unclipped: g.scalar(s1),
        value_loss: g.scalar(value_loss),
        entropy: -g.scalar(neg_entropy),
        dpm_loss: g.scalar(l_dpm),
        clipped: (r - 1.0).abs() > cfg.clip,
    };
    Ok((loss, terms))
}

fn sample_gradient(
    model: &Model,
    rec: &DecisionRecord,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
) -> Result<(ParamTree, f64, SampleTerms)> {
    let mut g = Graph::new(&model.params);
    let (loss, terms) = sample_loss(&mut g, model, rec, advantage, ret, cfg)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {value} (surrogate {}, value loss {}, entropy {}, dpm {})",
            terms.surrogate, terms.value_loss, terms.entropy, terms.dpm_loss
        )));
    }
    Ok((g.backward(loss)?, value, terms))
}

/// Clipped-surrogate PPO with value and entropy terms plus the DPM loss,
/// over `cfg.epochs` passes of shuffled minibatches.
pub fn ppo_update(
    model: &mut Model,
    adam: &mut Adam,
    buffers: &[EpisodeBuffer],
    cfg: &PpoConfig,
    shuffle_seed: u64,
) -> Result<UpdateStats> {
    let mut samples: Vec<(&DecisionRecord, f64, f64)> = Vec::new();
    let mut advantages = Vec::new();
    for b in buffers {
        let rewards: Vec<f64> = b.records.iter().map(|r| r.reward).collect();
        let values: Vec<f64> = b.records.iter().map(|r| r.value).collect();
        let (adv, ret) = compute_advantages(&rewards, &values, cfg.gamma, cfg.lambda);
        advantages.extend_from_slice(&adv);
        for (r, ret) in b.records.iter().zip(ret) {
            samples.push((r, 0.0, ret));
        }
    }
    let mut stats = UpdateStats { samples: samples.len(), ..UpdateStats::default() };
    if samples.is_empty() {
        stats.learning_rate = adam.learning_rate();
        return Ok(stats);
    }
    normalize(&mut advantages);
    for (s, a) in samples.iter_mut().zip(&advantages) {
        s.1 = *a;
    }

    let mut rng = seed::rng(shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut counted = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let results: Vec<Result<(ParamTree, f64, SampleTerms)>> = chunk
                .par_iter()
                .map(|&i| {
                    let (rec, adv, ret) = samples[i];
                    sample_gradient(model, rec, adv, ret, cfg)
                })
                .collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = ParamTree::new();
            let (mut surrogate, mut unclipped) = (0.0, 0.0);
            for res in results {
                let (gr, _, terms) = res?;
                grads.accumulate(&gr, scale);
                surrogate += terms.surrogate;
                unclipped += terms.unclipped;
                stats.policy_loss -= terms.surrogate;
                stats.value_loss += terms.value_loss;
                stats.entropy += terms.entropy;
                stats.dpm_loss += terms.dpm_loss;
                stats.clip_fraction += f64::from(u8::from(terms.clipped));
                counted += 1;
            }
            debug_assert!(surrogate <= unclipped + 1e-9, "clipped surrogate exceeds unclipped");
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm {norm}")));
            }
            if norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
            stats.grad_norm += norm;
            adam.step(&mut model.params, &grads)?;
            stats.optimizer_steps += 1;
        }
    }
    let n = counted as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.dpm_loss /= n;
    stats.clip_fraction /= n;
    stats.grad_norm /= stats.optimizer_steps as f64;
    stats.learning_rate = adam.learning_rate();
    if !model.params.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(stats)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Episode {
        episode: usize,
        seed: u64,
        fuel: f64,
        fires: usize,
        budget: f64,
        decisions: usize,
        #[serde(rename = "return")]
        episode_return: f64,
        final_trace: f64,
        final_rmse: f64,
        mean_rmse: f64,
        dpm_loss: f64,
        digest: String,
    },
    Update {
        update: usize,
        episodes: usize,
        mean_return: f64,
        #[serde(flatten)]
        stats: UpdateStats,
    },
}

impl LogRecord {
    pub fn episode(buffer: &EpisodeBuffer) -> Self {
        let m = &buffer.metrics;
        Self::Episode {
            episode: buffer.episode,
            seed: buffer.seed,
            fuel: m.env.fuel_coefficient,
            fires: m.env.fire_origins.len(),
            budget: m.budget,
            decisions: m.decisions,
            episode_return: buffer.episode_return(),
            final_trace: m.final_trace,
            final_rmse: m.rmse_series.last().copied().unwrap_or(0.0),
            mean_rmse: m.mean_rmse,
            dpm_loss: buffer.mean_dpm_loss(),
            digest: format!("{:016x}", buffer.digest()),
        }
    }
}

/// Rollout and update loop state.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub updates: usize,
    pub episodes: usize,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model, seed::derive(config.seed, u64::MAX))?;
        Self::resume(config, model)
    }

    /// Continues training from existing parameters with a fresh optimizer.
    pub fn resume(config: TrainConfig, model: Model) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(config.adam, &model.params)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        Ok(Self { config, model, adam, updates: 0, episodes: 0, pool })
    }

    pub fn finished(&self) -> bool {
        self.episodes >= self.config.episodes
    }

    /// Rolls out episodes `range` in parallel with sampled actions; results
    /// come back in episode order.
    pub fn collect(&self, range: std::ops::Range<usize>) -> Result<Vec<EpisodeBuffer>> {
        let spec = self.config.scenario_spec();
        let mission = self.config.mission_config();
        let model = &self.model;
        let config = &self.config;
        self.pool.install(|| {
            range
                .into_par_iter()
                .map(|episode| {
                    let s = config.episode_seed(episode);
                    let scenario = Scenario::sample(&spec, s)?;
                    let mut buffer = rollout_episode(model, &scenario, &mission, ActionMode::Sample, seed::derive(s, 1))?;
                    buffer.episode = episode;
                    buffer.seed = s;
                    Ok(buffer)
                })
                .collect()
        })
    }

    /// One batch of rollouts followed by one PPO update.
    pub fn step(&mut self) -> Result<(Vec<EpisodeBuffer>, UpdateStats)> {
        let end = (self.episodes + self.config.batch_size).min(self.config.episodes);
        let buffers = self.collect(self.episodes..end)?;
        let cfg = PpoConfig::from(&self.config);
        let shuffle_seed = seed::derive(self.config.seed ^ 0x5eed_5eed, self.updates as u64);
        let (model, adam) = (&mut self.model, &mut self.adam);
        let stats = self.pool.install(|| ppo_update(model, adam, &buffers, &cfg, shuffle_seed))?;
        if self.adam.config.decay_clock == DecayClock::Tick {
            self.adam.tick();
        }
        self.episodes = end;
        self.updates += 1;
        Ok((buffers, stats))
    }

    /// Log records for one completed step.
    pub fn log_step(&self, buffers: &[EpisodeBuffer], stats: &UpdateStats) -> Vec<LogRecord> {
        let mut out: Vec<LogRecord> = buffers.iter().map(LogRecord::episode).collect();
        let mean_return = if buffers.is_empty() {
            0.0
        } else {
            buffers.iter().map(EpisodeBuffer::episode_return).sum::<f64>() / buffers.len() as f64
        };
        out.push(LogRecord::Update { update: self.updates - 1, episodes: buffers.len(), mean_return, stats: *stats });
        out
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRecord>,
}

/// Runs the full loop, passing each log record to `on_record` as it is made.
pub fn train(config: TrainConfig, mut on_record: impl FnMut(&LogRecord) -> Result<()>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut log = Vec::new();
    while !trainer.finished() {
        let (buffers, stats) = trainer.step()?;
        for rec in trainer.log_step(&buffers, &stats) {
            on_record(&rec)?;
            log.push(rec);
        }
    }
    Ok(TrainOutcome { model: trainer.model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn gae_degenerate_cases() {
        let r = [1.0, 0.5, -0.2, 2.0];
        let v = [0.3, -0.1, 0.7, 0.2];
        let (adv, ret) = compute_advantages(&r, &v, 0.9, 0.0);
        for t in 0..4 {
            let next = if t < 3 { v[t + 1] } else { 0.0 };
            assert_abs_diff_eq!(adv[t], r[t] + 0.9 * next - v[t], epsilon = 1e-15);
            assert_abs_diff_eq!(ret[t], adv[t] + v[t], epsilon = 1e-15);
        }
        let (adv, _) = compute_advantages(&r, &v, 1.0, 1.0);
        for t in 0..4 {
            assert_abs_diff_eq!(adv[t], r[t..].iter().sum::<f64>() - v[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn gae_matches_recursive_definition() {
        fn brute(r: &[f64], v: &[f64], g: f64, l: f64, t: usize) -> f64 {
            if t >= r.len() {
                return 0.0;
            }
            let next = if t + 1 < r.len() { v[t + 1] } else { 0.0 };
            r[t] + g * next - v[t] + g * l * brute(r, v, g, l, t + 1)
        }
        let mut rng = seed::rng(4);
        for _ in 0..20 {
            let n = rng.gen_range(1..30);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (adv, _) = compute_advantages(&r, &v, 0.99, 0.95);
            for t in 0..n {
                assert_abs_diff_eq!(adv[t], brute(&r, &v, 0.99, 0.95, t), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn normalize_centres_and_scales() {
        let mut v = vec![1.0, 2.0, 3.0, 6.0];
        normalize(&mut v);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { workers: 0, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { k: 50, ..TrainConfig::toy() }.validate().is_err());
    }
}
