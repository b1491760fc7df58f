//! Evaluation campaigns, metrics files, latent export and probing, and
//! decision latency.

mod eval;
mod latency;
mod latents;
mod stats;

pub use eval::{
    evaluate, mean_std, read_metrics, summarize, write_metrics, write_summary, CellSummary, EvalSpec, MetricsRecord,
    Planner, METRICS_SCHEMA,
};
pub use latency::{decision_latency, LatencyReport};
pub use latents::{
    export_latents, extremes, latent_probe, read_latents, write_latents, LatentRow, LatentSpec, MIN_ROWS_PER_CLASS,
    PROBE_FOLDS,
};
pub use stats::{paired_t_test_less, PairedTest};

#[cfg(test)]
mod tests;
