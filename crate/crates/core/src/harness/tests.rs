use rand::Rng;

use super::*;
use crate::mission::MissionConfig;
use crate::model::{Model, ModelConfig};
use crate::seed::rng;

fn small_spec() -> EvalSpec {
    EvalSpec {
        fuel_values: vec![1.0, 10.0],
        budgets: vec![2.0],
        fire_counts: vec![1],
        n_instances: 3,
        nodes: 30,
        k: 6,
        mission: MissionConfig { resolution: 8, max_steps: 32, ..MissionConfig::default() },
        ..EvalSpec::default()
    }
}

#[test]
fn single_instance_has_zero_std() {
    assert_eq!(mean_std(&[4.2]), (4.2, 0.0));
    let spec = EvalSpec { n_instances: 1, ..small_spec() };
    let cells = summarize(&evaluate(&spec, &Planner::Random).unwrap());
    assert_eq!(cells.len(), 2);
    assert!(cells.iter().all(|c| c.n == 1 && c.trace_std == 0.0 && c.rmse_std == 0.0));
}

#[test]
fn evaluation_is_repeatable_and_round_trips() {
    let spec = small_spec();
    let model = Model::init(ModelConfig::toy(), 1).unwrap();
    let a = evaluate(&spec, &Planner::Learned(&model)).unwrap();
    let b = evaluate(&spec, &Planner::Learned(&model)).unwrap();
    assert_eq!(summarize(&a), summarize(&b));
    let mut buf = Vec::new();
    write_metrics(&mut buf, &a).unwrap();
    assert_eq!(read_metrics(buf.as_slice()).unwrap(), a);
    let mut sbuf = Vec::new();
    write_summary(&mut sbuf, &summarize(&a)).unwrap();
    assert_eq!(String::from_utf8(sbuf).unwrap().lines().count(), 3);
}

#[test]
fn metrics_reject_wrong_schema() {
    assert!(read_metrics("method,fuel\n".as_bytes()).is_err());
}

#[test]
fn latents_round_trip() {
    let mut r = rng(3);
    let rows: Vec<LatentRow> =
        (0..6).map(|i| LatentRow { label: [1.0, 10.0][i % 2], z: (0..16).map(|_| r.gen_range(-1.0..1.0)).collect() }).collect();
    let mut buf = Vec::new();
    write_latents(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 17);
    assert_eq!(read_latents(buf.as_slice()).unwrap(), rows);
}

fn clusters(separated: bool, per_class: usize, classes: usize, seed: u64) -> Vec<LatentRow> {
    let mut r = rng(seed);
    (0..per_class * classes)
        .map(|i| {
            let c = i % classes;
            let shift = if separated { 5.0 * c as f64 } else { 0.0 };
            LatentRow { label: c as f64, z: (0..16).map(|_| shift + r.gen_range(-1.0..1.0)).collect() }
        })
        .collect()
}

#[test]
fn probe_separates_clusters() {
    assert_eq!(latent_probe(&clusters(true, 40, 3, 4), 0).unwrap(), 1.0);
}

#[test]
fn probe_is_at_chance_on_noise() {
    let acc = latent_probe(&clusters(false, 100, 2, 5), 0).unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "{acc}");
}

#[test]
fn probe_rejects_degenerate_input() {
    assert!(latent_probe(&clusters(true, 40, 1, 6), 0).is_err());
    assert!(latent_probe(&clusters(true, 10, 2, 6), 0).is_err());
}

#[test]
fn extremes_keep_min_and_max() {
    let rows = clusters(true, 2, 3, 7);
    let ex = extremes(&rows);
    assert!(ex.iter().all(|r| r.label == 0.0 || r.label == 2.0));
    assert_eq!(ex.len(), 4);
}

#[test]
fn paired_test_direction() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.5, 2.4, 3.6, 4.3, 5.9];
    let t = paired_t_test_less(&a, &b).unwrap();
    assert!(t.p_value < 0.05 && t.t < 0.0);
    let t = paired_t_test_less(&b, &a).unwrap();
    assert!(t.p_value > 0.95);
}

#[test]
fn latency_is_positive_and_grows_with_size() {
    let toy = Model::init(ModelConfig::toy(), 2).unwrap();
    let full = Model::init(ModelConfig::default(), 2).unwrap();
    let a = decision_latency(&toy, 200, 20, 5, 1).unwrap();
    let b = decision_latency(&full, 200, 20, 5, 1).unwrap();
    assert!(a.median_seconds > 0.0);
    assert!(a.median_seconds < b.median_seconds);
}
