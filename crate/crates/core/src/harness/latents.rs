use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm::LATENT_DIM;
use crate::error::{invalid, Error, Result};
use crate::firesim::RandomizationSpec;
use crate::mission::{MissionConfig, Scenario, ScenarioSpec};
use crate::model::Model;
use crate::policy::ActionMode;
use crate::seed;
use crate::trainer::rollout_episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentSpec {
    pub fuel_values: Vec<f64>,
    pub seeds: usize,
    pub budget: f64,
    pub fire_count_min: u32,
    pub fire_count_max: u32,
    pub nodes: usize,
    pub k: usize,
    pub mission: MissionConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self {
            fuel_values: vec![1.0, 5.0, 10.0],
            seeds: 200,
            budget: 8.0,
            fire_count_min: 1,
            fire_count_max: 3,
            nodes: 200,
            k: 20,
            mission: MissionConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub label: f64,
    pub z: Vec<f64>,
}

/// Final DPM latent of one greedy episode per (fuel value, seed).
pub fn export_latents(spec: &LatentSpec, model: &Model) -> Result<Vec<LatentRow>> {
    if spec.fuel_values.is_empty() || spec.seeds == 0 {
        return Err(invalid("latents", "need at least one fuel value and one seed"));
    }
    let jobs: Vec<(f64, usize)> =
        spec.fuel_values.iter().flat_map(|&f| (0..spec.seeds).map(move |i| (f, i))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(fuel, i)| {
                let scenario_spec = ScenarioSpec {
                    nodes: spec.nodes,
                    k: spec.k,
                    budget_min: spec.budget,
                    budget_max: spec.budget,
                    randomization: RandomizationSpec {
                        fuel_min: fuel,
                        fuel_max: fuel,
                        fire_count_min: spec.fire_count_min,
                        fire_count_max: spec.fire_count_max,
                        ..RandomizationSpec::default()
                    },
                };
                let s = seed::derive(spec.seed, i as u64);
                let scenario = Scenario::sample(&scenario_spec, s)?;
                let buffer = rollout_episode(model, &scenario, &spec.mission, ActionMode::Greedy, seed::derive(s, 1))?;
                Ok(LatentRow { label: fuel, z: buffer.final_latent })
            })
            .collect()
    })
}

pub fn write_latents<W: Write>(mut w: W, rows: &[LatentRow]) -> Result<()> {
    let header: Vec<String> = std::iter::once("label".to_string()).chain((0..LATENT_DIM).map(|i| format!("z{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let vals: Vec<String> = std::iter::once(r.label.to_string()).chain(r.z.iter().map(f64::to_string)).collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_latents<R: BufRead>(r: R) -> Result<Vec<LatentRow>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format { what: "latents", reason: format!("line {}: {e}", i + 1) })?;
        if vals.len() != LATENT_DIM + 1 {
            return Err(Error::Format { what: "latents", reason: format!("line {}: {} fields", i + 1, vals.len()) });
        }
        out.push(LatentRow { label: vals[0], z: vals[1..].to_vec() });
    }
    Ok(out)
}

/// Rows whose label is the smallest or largest present.
pub fn extremes(rows: &[LatentRow]) -> Vec<LatentRow> {
    let lo = rows.iter().map(|r| r.label).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.label).fold(f64::NEG_INFINITY, f64::max);
    rows.iter().filter(|r| r.label == lo || r.label == hi).cloned().collect()
}

pub const PROBE_FOLDS: usize = 5;
pub const MIN_ROWS_PER_CLASS: usize = 20;
const PROBE_ITERATIONS: usize = 500;
const PROBE_STEP: f64 = 0.5;
const PROBE_L2: f64 = 1e-3;

/// Multinomial logistic regression trained by full-batch gradient descent.
struct Softmax {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Softmax {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> =
            self.weights.iter().zip(&self.bias).map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let dim = x[0].len();
        let mut m = Self { weights: vec![vec![0.0; dim]; classes], bias: vec![0.0; classes] };
        let n = x.len() as f64;
        for _ in 0..PROBE_ITERATIONS {
            let mut gw = vec![vec![0.0; dim]; classes];
            let mut gb = vec![0.0; classes];
            for (xi, &yi) in x.iter().zip(y) {
                let p = m.scores(xi);
                for c in 0..classes {
                    let err = p[c] - f64::from(u8::from(c == yi));
                    gb[c] += err;
                    for (g, v) in gw[c].iter_mut().zip(xi) {
                        *g += err * v;
                    }
                }
            }
            for c in 0..classes {
                m.bias[c] -= PROBE_STEP * gb[c] / n;
                for (w, g) in m.weights[c].iter_mut().zip(&gw[c]) {
                    *w -= PROBE_STEP * (g / n + PROBE_L2 * *w);
                }
            }
        }
        m
    }

    fn predict(&self, x: &[f64]) -> usize {
        let p = self.scores(x);
        (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }
}

/// Cross-validated accuracy of a linear classifier predicting the label
/// from the latent. Features are standardized with training-fold statistics.
pub fn latent_probe(rows: &[LatentRow], probe_seed: u64) -> Result<f64> {
    let mut labels: Vec<f64> = rows.iter().map(|r| r.label).collect();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::Degenerate(format!("probe needs at least 2 classes, got {}", labels.len())));
    }
    for l in &labels {
        let count = rows.iter().filter(|r| r.label == *l).count();
        if count < MIN_ROWS_PER_CLASS {
            return Err(Error::Degenerate(format!("class {l} has {count} rows, need {MIN_ROWS_PER_CLASS}")));
        }
    }
    let class = |l: f64| labels.iter().position(|v| *v == l).expect("label collected above");
    // stratified fold assignment
    let mut rng = seed::rng(probe_seed);
    let mut fold = vec![0usize; rows.len()];
    for l in &labels {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label == *l).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % PROBE_FOLDS;
        }
    }
    let dim = rows[0].z.len();
    let mut correct = 0usize;
    for k in 0..PROBE_FOLDS {
        let train: Vec<usize> = (0..rows.len()).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..rows.len()).filter(|&i| fold[i] == k).collect();
        let mut mean = vec![0.0; dim];
        let mut sd = vec![0.0; dim];
        for &i in &train {
            for (m, v) in mean.iter_mut().zip(&rows[i].z) {
                *m += v / train.len() as f64;
            }
        }
        for &i in &train {
            for ((s, v), m) in sd.iter_mut().zip(&rows[i].z).zip(&mean) {
                *s += (v - m).powi(2) / train.len() as f64;
            }
        }
        let scale = |z: &[f64]| -> Vec<f64> {
            z.iter().zip(&mean).zip(&sd).map(|((v, m), s)| if *s > 1e-24 { (v - m) / s.sqrt() } else { 0.0 }).collect()
        };
        let x: Vec<Vec<f64>> = train.iter().map(|&i| scale(&rows[i].z)).collect();
        let y: Vec<usize> = train.iter().map(|&i| class(rows[i].label)).collect();
        let model = Softmax::fit(&x, &y, labels.len());
        correct += test.iter().filter(|&&i| model.predict(&scale(&rows[i].z)) == class(rows[i].label)).count();
    }
    Ok(correct as f64 / rows.len() as f64)
}
