mod cli;
mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};

use firewatch_core::firesim::{sample_environment, GroundTruthField, RandomizationSpec};
use firewatch_core::harness::{
    decision_latency, evaluate, export_latents, extremes, latent_probe, read_latents, summarize, write_latents,
    write_metrics, write_summary, EvalSpec, LatentSpec, Planner,
};
use firewatch_core::model::{Model, ModelConfig};
use firewatch_core::roadmap::RoadmapGraph;
use firewatch_core::seed;
use firewatch_core::trainer::{LogRecord, TrainConfig, Trainer};

use cli::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] firewatch_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::ExportLatents(a) => latents(a),
        Command::Probe(a) => probe(a),
        Command::Latency(a) => latency(a),
    }
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SimulateSettings {
    fuel: f64,
    wind_speed: f64,
    fires: u32,
    ignition_horizon: u32,
    resolution: usize,
    horizon: usize,
    seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self { fuel: 5.0, wind_speed: 5.0, fires: 1, ignition_horizon: 32, resolution: 30, horizon: 257, seed: 0 }
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut s = config::apply_file(SimulateSettings::default(), a.config.as_deref(), "simulate")?;
    set!(s.fuel, a.fuel);
    set!(s.wind_speed, a.wind_speed);
    set!(s.fires, a.fires);
    set!(s.ignition_horizon, a.ignition_horizon);
    set!(s.resolution, a.resolution);
    set!(s.horizon, a.horizon);
    set!(s.seed, a.seed);
    let spec = RandomizationSpec {
        wind_speed: s.wind_speed,
        ignition_horizon: s.ignition_horizon,
        ..RandomizationSpec::fixed(s.fuel, s.fires)
    };
    let env = sample_environment(&mut seed::rng(s.seed), &spec)?;
    let field = GroundTruthField::simulate(&env, s.resolution, s.horizon)?;
    let mut w = create(&a.out)?;
    field.write_to(&mut w)?;
    w.flush().map_err(io_err(&a.out))?;
    println!("wrote {} frames at {}x{} to {}", field.horizon(), s.resolution, s.resolution, a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GraphSettings {
    nodes: usize,
    k: usize,
    seed: u64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self { nodes: 200, k: 20, seed: 0 }
    }
}

fn build_graph(a: GraphArgs) -> Result<(), CliError> {
    let mut s = config::apply_file(GraphSettings::default(), a.config.as_deref(), "build-graph")?;
    set!(s.nodes, a.nodes);
    set!(s.k, a.k);
    set!(s.seed, a.seed);
    let graph = RoadmapGraph::build(s.nodes, s.k, s.seed)?;
    std::fs::write(&a.out, graph.to_text()).map_err(io_err(&a.out))?;
    println!("wrote {}-node graph to {}", graph.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let base = match a.profile {
        Profile::Toy => TrainConfig::toy(),
        Profile::Full => TrainConfig::default(),
    };
    let mut c = config::apply_file(base, a.config.as_deref(), "train")?;
    set!(c.episodes, a.episodes);
    set!(c.workers, a.workers);
    set!(c.seed, a.seed);
    set!(c.nodes, a.nodes);
    set!(c.k, a.k);
    set!(c.batch_size, a.batch_size);
    set!(c.ppo_epochs, a.ppo_epochs);
    set!(c.minibatch_size, a.minibatch_size);
    set!(c.adam.learning_rate, a.learning_rate);
    set!(c.max_steps, a.max_steps);
    set!(c.model.mode, a.mode.map(Into::into));
    if a.no_latent {
        c.model.use_latent = false;
    }
    let mut trainer = match &a.resume {
        Some(path) => {
            let model = Model::load(path)?;
            c.model = model.config;
            Trainer::resume(c, model)?
        }
        None => Trainer::new(c)?,
    };
    let mut log = a.log.as_deref().map(create).transpose()?;
    while !trainer.finished() {
        let (buffers, stats) = trainer.step()?;
        let records = trainer.log_step(&buffers, &stats);
        if let (Some(w), Some(path)) = (log.as_mut(), a.log.as_deref()) {
            for rec in &records {
                let line = serde_json::to_string(rec).map_err(|e| CliError::Usage(e.to_string()))?;
                writeln!(w, "{line}").map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        if let Some(LogRecord::Update { update, mean_return, stats, .. }) = records.last() {
            eprintln!(
                "update {update} episodes {} return {mean_return:.3} dpm {:.5} entropy {:.3}",
                trainer.episodes, stats.dpm_loss, stats.entropy
            );
        }
        if a.checkpoint_every > 0 && trainer.updates % a.checkpoint_every == 0 {
            trainer.model.save(&a.out)?;
        }
    }
    trainer.model.save(&a.out)?;
    println!("wrote checkpoint {} after {} episodes", a.out.display(), trainer.episodes);
    Ok(())
}

fn campaign_spec(a: &CampaignArgs, section: &str) -> Result<EvalSpec, CliError> {
    let mut s = config::apply_file(EvalSpec::default(), a.config.as_deref(), section)?;
    set!(s.fuel_values, a.fuel_values.clone());
    set!(s.budgets, a.budgets.clone());
    set!(s.fire_counts, a.fire_counts.clone());
    set!(s.n_instances, a.n_instances);
    set!(s.nodes, a.nodes);
    set!(s.k, a.k);
    set!(s.mission.resolution, a.resolution);
    set!(s.mission.max_steps, a.max_steps);
    set!(s.seed, a.seed);
    set!(s.workers, a.workers);
    Ok(s)
}

fn run_campaign(spec: &EvalSpec, planner: &Planner<'_>, a: &CampaignArgs) -> Result<(), CliError> {
    let records = evaluate(spec, planner)?;
    let mut w = create(&a.out)?;
    write_metrics(&mut w, &records)?;
    w.flush().map_err(io_err(&a.out))?;
    let cells = summarize(&records);
    match &a.summary {
        Some(path) => {
            let mut w = create(path)?;
            write_summary(&mut w, &cells)?;
            w.flush().map_err(io_err(path))?;
        }
        None => write_summary(std::io::stdout().lock(), &cells)?,
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut spec = campaign_spec(&a.campaign, "eval")?;
    if a.checkpoint.is_some() {
        spec.checkpoint = a.checkpoint.clone();
    }
    match a.planner {
        PlannerKind::Learned => {
            let path = spec.checkpoint.clone().ok_or_else(|| CliError::Usage("--checkpoint is required for the learned planner".into()))?;
            let model = Model::load(&path)?;
            match a.campaign.resolution {
                Some(r) if r != model.config.resolution => {
                    return Err(CliError::Usage(format!(
                        "--resolution {r} does not match the checkpoint's resolution {}",
                        model.config.resolution
                    )))
                }
                _ => spec.mission.resolution = model.config.resolution,
            }
            run_campaign(&spec, &Planner::Learned(&model), &a.campaign)
        }
        PlannerKind::Sampling => run_campaign(&spec, &Planner::Sampling, &a.campaign),
        PlannerKind::Random => run_campaign(&spec, &Planner::Random, &a.campaign),
    }
}

fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    let mut spec = campaign_spec(&a.campaign, "baseline")?;
    set!(spec.baseline.n_initial_observations, a.n_initial_observations);
    set!(spec.baseline.distance_weight, a.distance_weight);
    let planner = match a.kind {
        BaselineKind::Sampling => Planner::Sampling,
        BaselineKind::Random => Planner::Random,
    };
    run_campaign(&spec, &planner, &a.campaign)
}

fn latents(a: LatentArgs) -> Result<(), CliError> {
    let model = Model::load(&a.checkpoint)?;
    let mut s = config::apply_file(LatentSpec::default(), a.config.as_deref(), "export-latents")?;
    set!(s.fuel_values, a.fuel_values);
    set!(s.seeds, a.seeds);
    set!(s.budget, a.budget);
    set!(s.nodes, a.nodes);
    set!(s.k, a.k);
    set!(s.seed, a.seed);
    set!(s.workers, a.workers);
    s.mission.resolution = model.config.resolution;
    let rows = export_latents(&s, &model)?;
    let mut w = create(&a.out)?;
    write_latents(&mut w, &rows)?;
    w.flush().map_err(io_err(&a.out))?;
    println!("wrote {} latents to {}", rows.len(), a.out.display());
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<(), CliError> {
    let file = File::open(&a.input).map_err(io_err(&a.input))?;
    let mut rows = read_latents(BufReader::new(file))?;
    if a.extremes {
        rows = extremes(&rows);
    }
    let acc = latent_probe(&rows, a.seed)?;
    println!("{acc:.4}");
    Ok(())
}

fn latency(a: LatencyArgs) -> Result<(), CliError> {
    let model = match &a.checkpoint {
        Some(path) => Model::load(path)?,
        None => {
            let config = match a.profile {
                Profile::Toy => ModelConfig::toy(),
                Profile::Full => ModelConfig::default(),
            };
            Model::init(config, a.seed)?
        }
    };
    let r = decision_latency(&model, a.nodes, a.k, a.passes, a.seed)?;
    println!(
        "passes {} median {:.6} s min {:.6} s max {:.6} s",
        r.passes, r.median_seconds, r.min_seconds, r.max_seconds
    );
    Ok(())
}
