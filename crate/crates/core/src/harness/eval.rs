use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_random_policy, run_sampling_baseline, BaselineConfig};
use crate::error::{invalid, Error, Result};
use crate::firesim::RandomizationSpec;
use crate::mission::{MissionConfig, MissionMetrics, Scenario, ScenarioSpec};
use crate::model::Model;
use crate::policy::ActionMode;
use crate::seed;
use crate::trainer::rollout_episode;

pub const METRICS_SCHEMA: &str = "# firewatch-metrics v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub fuel_values: Vec<f64>,
    pub budgets: Vec<f64>,
    pub fire_counts: Vec<u32>,
    pub n_instances: usize,
    pub nodes: usize,
    pub k: usize,
    pub wind_speed: f64,
    pub ignition_horizon: u32,
    pub mission: MissionConfig,
    pub baseline: BaselineConfig,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            fuel_values: vec![1.0, 5.0, 10.0],
            budgets: vec![7.0, 11.0, 15.0],
            fire_counts: vec![1, 3, 5],
            n_instances: 200,
            nodes: 200,
            k: 20,
            wind_speed: 5.0,
            ignition_horizon: 32,
            mission: MissionConfig::default(),
            baseline: BaselineConfig::default(),
            checkpoint: None,
            seed: 0,
            workers: 1,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fuel_values.is_empty() || self.budgets.is_empty() || self.fire_counts.is_empty() {
            return Err(invalid("eval", "fuel_values, budgets and fire_counts must be nonempty"));
        }
        if self.n_instances == 0 || self.workers == 0 {
            return Err(invalid("eval", "n_instances and workers must be >= 1"));
        }
        self.mission.validate()
    }

    /// Every (fuel, budget, fires) combination in spec order.
    pub fn cells(&self) -> Vec<(f64, f64, u32)> {
        let mut out = Vec::new();
        for &f in &self.fuel_values {
            for &b in &self.budgets {
                for &n in &self.fire_counts {
                    out.push((f, b, n));
                }
            }
        }
        out
    }

    /// Scenario seeds depend only on the instance index, so every method
    /// and every cell sees the same graphs and ignition draws.
    pub fn instance_seed(&self, instance: usize) -> u64 {
        seed::derive(self.seed, instance as u64)
    }

    pub fn scenario(&self, fuel: f64, budget: f64, fires: u32, instance: usize) -> Result<Scenario> {
        let spec = ScenarioSpec {
            nodes: self.nodes,
            k: self.k,
            budget_min: budget,
            budget_max: budget,
            randomization: RandomizationSpec {
                wind_speed: self.wind_speed,
                ignition_horizon: self.ignition_horizon,
                ..RandomizationSpec::fixed(fuel, fires)
            },
        };
        Scenario::sample(&spec, self.instance_seed(instance))
    }
}

pub enum Planner<'m> {
    Learned(&'m Model),
    Sampling,
    Random,
}

impl Planner<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Planner::Learned(_) => "learned",
            Planner::Sampling => "sampling",
            Planner::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub fuel: f64,
    pub budget: f64,
    pub fires: u32,
    pub instance: usize,
    pub seed: u64,
    pub decisions: usize,
    pub final_trace: f64,
    pub mean_rmse: f64,
    pub seconds_per_decision: f64,
    pub rmse_series: Vec<f64>,
}

fn run_one(spec: &EvalSpec, planner: &Planner<'_>, cell: (f64, f64, u32), instance: usize) -> Result<MetricsRecord> {
    let (fuel, budget, fires) = cell;
    let scenario = spec.scenario(fuel, budget, fires, instance)?;
    let s = spec.instance_seed(instance);
    let started = std::time::Instant::now();
    let metrics: MissionMetrics = match planner {
        Planner::Learned(model) => {
            rollout_episode(model, &scenario, &spec.mission, ActionMode::Greedy, seed::derive(s, 1))?.metrics
        }
        Planner::Sampling => run_sampling_baseline(&scenario, &spec.mission, &spec.baseline, seed::derive(s, 2))?,
        Planner::Random => run_random_policy(&scenario, &spec.mission, seed::derive(s, 3))?,
    };
    let elapsed = started.elapsed().as_secs_f64();
    Ok(MetricsRecord {
        method: planner.name().to_string(),
        fuel,
        budget,
        fires,
        instance,
        seed: s,
        decisions: metrics.decisions,
        final_trace: metrics.final_trace,
        mean_rmse: metrics.mean_rmse,
        seconds_per_decision: if metrics.decisions > 0 { elapsed / metrics.decisions as f64 } else { 0.0 },
        rmse_series: metrics.rmse_series,
    })
}

/// Runs every cell and instance; records come back in cell-major order.
pub fn evaluate(spec: &EvalSpec, planner: &Planner<'_>) -> Result<Vec<MetricsRecord>> {
    spec.validate()?;
    let jobs: Vec<((f64, f64, u32), usize)> =
        spec.cells().into_iter().flat_map(|c| (0..spec.n_instances).map(move |i| (c, i))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| invalid("workers", e.to_string()))?;
    pool.install(|| jobs.par_iter().map(|&(c, i)| run_one(spec, planner, c, i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub fuel: f64,
    pub budget: f64,
    pub fires: u32,
    pub n: usize,
    pub trace_mean: f64,
    pub trace_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-(method, fuel, budget, fires) aggregates in first-seen order.
/// Wall-clock timings are not part of the table.
pub fn summarize(records: &[MetricsRecord]) -> Vec<CellSummary> {
    type Key = (String, u64, u64, u32);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: BTreeMap<Key, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.fuel.to_bits(), r.budget.to_bits(), r.fires);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let traces: Vec<f64> = rows.iter().map(|r| r.final_trace).collect();
            let rmses: Vec<f64> = rows.iter().map(|r| r.mean_rmse).collect();
            let (trace_mean, trace_std) = mean_std(&traces);
            let (rmse_mean, rmse_std) = mean_std(&rmses);
            CellSummary {
                method: key.0,
                fuel: rows[0].fuel,
                budget: rows[0].budget,
                fires: rows[0].fires,
                n: rows.len(),
                trace_mean,
                trace_std,
                rmse_mean,
                rmse_std,
            }
        })
        .collect()
}

const METRICS_HEADER: &str =
    "method,fuel,budget,fires,instance,seed,decisions,final_trace,mean_rmse,seconds_per_decision,rmse_series";
const SUMMARY_HEADER: &str = "method,fuel,budget,fires,n,trace_mean,trace_std,rmse_mean,rmse_std";

/// Writes records as delimited text. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_metrics<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "{METRICS_SCHEMA}")?;
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        let series: Vec<String> = r.rmse_series.iter().map(f64::to_string).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.fuel,
            r.budget,
            r.fires,
            r.instance,
            r.seed,
            r.decisions,
            r.final_trace,
            r.mean_rmse,
            r.seconds_per_decision,
            series.join(";")
        )?;
    }
    Ok(())
}

fn parse_err(line: usize, reason: impl std::fmt::Display) -> Error {
    Error::Format { what: "metrics", reason: format!("line {line}: {reason}") }
}

pub fn read_metrics<R: BufRead>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut lines = r.lines();
    let schema = lines.next().transpose()?.unwrap_or_default();
    if schema.trim() != METRICS_SCHEMA {
        return Err(parse_err(1, format!("expected schema line {METRICS_SCHEMA:?}")));
    }
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != METRICS_HEADER {
        return Err(parse_err(2, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 3;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(parse_err(n, format!("{} fields", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(n, e));
        let int = |s: &str| s.parse::<u64>().map_err(|e| parse_err(n, e));
        let rmse_series =
            if f[10].is_empty() { Vec::new() } else { f[10].split(';').map(num).collect::<Result<Vec<_>>>()? };
        out.push(MetricsRecord {
            method: f[0].to_string(),
            fuel: num(f[1])?,
            budget: num(f[2])?,
            fires: int(f[3])? as u32,
            instance: int(f[4])? as usize,
            seed: int(f[5])?,
            decisions: int(f[6])? as usize,
            final_trace: num(f[7])?,
            mean_rmse: num(f[8])?,
            seconds_per_decision: num(f[9])?,
            rmse_series,
        });
    }
    Ok(out)
}

pub fn write_summary<W: Write>(mut w: W, cells: &[CellSummary]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            c.method, c.fuel, c.budget, c.fires, c.n, c.trace_mean, c.trace_std, c.rmse_mean, c.rmse_std
        )?;
    }
    Ok(())
}
