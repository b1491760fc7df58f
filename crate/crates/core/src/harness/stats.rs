use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for the alternative `mean(a - b) < 0`.
    pub p_value: f64,
}

/// Paired one-sided t-test that `a` is smaller than `b` on average.
pub fn paired_t_test_less(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("paired samples", format!("need equal lengths >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        let p_value = if mean < 0.0 { 0.0 } else { 1.0 };
        let t = if mean < 0.0 { f64::NEG_INFINITY } else if mean > 0.0 { f64::INFINITY } else { 0.0 };
        return Ok(PairedTest { n, mean_difference: mean, t, p_value });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| invalid("t distribution", e.to_string()))?;
    Ok(PairedTest { n, mean_difference: mean, t, p_value: dist.cdf(t) })
}
