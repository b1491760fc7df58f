//! Policy and DPM parameters bundled with the settings needed to rebuild
//! them from a checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Dtype};
use crate::autodiff::{ParamTree, Tensor};
use crate::dpm::{Dpm, PredictionMode};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding: usize,
    pub heads: usize,
    /// Belief grid side fed to the DPM.
    pub resolution: usize,
    pub mode: PredictionMode,
    /// When false the policy receives a zero latent.
    pub use_latent: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embedding: 128, heads: 4, resolution: 30, mode: PredictionMode::Next, use_latent: true }
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self { embedding: 16, heads: 1, resolution: 8, ..Self::default() }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig { embedding: self.embedding, heads: self.heads }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub policy: Policy,
    pub dpm: Dpm,
    pub params: ParamTree,
}

fn mode_code(mode: PredictionMode) -> f64 {
    match mode {
        PredictionMode::Current => 0.0,
        PredictionMode::Delta => 1.0,
        PredictionMode::Next => 2.0,
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let policy = Policy::new(config.policy_config())?;
        let dpm = Dpm::new(config.resolution)?;
        let mut params = policy.init(&mut seed::rng(seed::derive(seed, 0)));
        params.extend(dpm.init(&mut seed::rng(seed::derive(seed, 1))));
        Ok(Self { config, policy, dpm, params })
    }

    fn meta(&self) -> ParamTree {
        let c = &self.config;
        let mut m = ParamTree::new();
        m.insert("meta.embedding", Tensor::scalar(c.embedding as f64));
        m.insert("meta.heads", Tensor::scalar(c.heads as f64));
        m.insert("meta.resolution", Tensor::scalar(c.resolution as f64));
        m.insert("meta.mode", Tensor::scalar(mode_code(c.mode)));
        m.insert("meta.use_latent", Tensor::scalar(if c.use_latent { 1.0 } else { 0.0 }));
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut all = self.params.clone();
        all.extend(self.meta());
        checkpoint::save(path, &all, Dtype::F64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let all = checkpoint::load(path)?;
        let scalar = |name: &str| -> Result<f64> {
            Ok(all.get(name)?.data.first().copied().ok_or_else(|| Error::Format {
                what: "checkpoint",
                reason: format!("{name} is empty"),
            })?)
        };
        let mode = match scalar("meta.mode")? as i64 {
            0 => PredictionMode::Current,
            1 => PredictionMode::Delta,
            2 => PredictionMode::Next,
            other => return Err(Error::Format { what: "checkpoint", reason: format!("mode code {other}") }),
        };
        let config = ModelConfig {
            embedding: scalar("meta.embedding")? as usize,
            heads: scalar("meta.heads")? as usize,
            resolution: scalar("meta.resolution")? as usize,
            mode,
            use_latent: scalar("meta.use_latent")? != 0.0,
        };
        let mut model = Self::init(config, 0)?;
        for (name, t) in model.params.iter_mut() {
            let stored = all.get(name)?;
            if stored.shape != t.shape {
                return Err(Error::Format {
                    what: "checkpoint",
                    reason: format!("{name}: shape {:?}, expected {:?}", stored.shape, t.shape),
                });
            }
            *t = stored.clone();
        }
        Ok(model)
    }
}
