use serde::{Deserialize, Serialize};

use super::tensor::ParamTree;
use crate::error::{invalid, Result};

/// What advances the decay schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayClock {
    /// Every call to [`Adam::step`].
    #[default]
    Step,
    /// Only explicit calls to [`Adam::tick`], e.g. once per training update.
    Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Staircase decay: the rate is multiplied by `decay_rate` after every
    /// `decay_every` schedule ticks. Zero disables decay.
    pub decay_every: u64,
    pub decay_rate: f64,
    pub decay_clock: DecayClock,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, decay_every: 32, decay_rate: 0.96, decay_clock: DecayClock::Step }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", format!("must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.decay_rate <= 0.0 || self.decay_rate > 1.0 {
            return Err(invalid("decay_rate", format!("must lie in (0, 1], got {}", self.decay_rate)));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub first_moment: ParamTree,
    pub second_moment: ParamTree,
    pub steps: u64,
    pub ticks: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamTree) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, first_moment: params.zeros_like(), second_moment: params.zeros_like(), steps: 0, ticks: 0 })
    }

    /// Learning rate applied by the next step.
    pub fn learning_rate(&self) -> f64 {
        let c = &self.config;
        if c.decay_every == 0 {
            return c.learning_rate;
        }
        c.learning_rate * c.decay_rate.powi((self.ticks / c.decay_every) as i32)
    }

    /// Advances the decay schedule by one tick.
    pub fn tick(&mut self) {
        self.ticks += 1;
    }

    /// Applies one update. Parameters without a gradient entry are left alone.
    pub fn step(&mut self, params: &mut ParamTree, grads: &ParamTree) -> Result<()> {
        let lr = self.learning_rate();
        self.steps += 1;
        if self.config.decay_clock == DecayClock::Step {
            self.ticks += 1;
        }
        let t = self.steps as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Ok(gr) = grads.get(name) else { continue };
            if gr.shape != p.shape {
                return Err(invalid("gradient", format!("{name}: shape {:?} for parameter {:?}", gr.shape, p.shape)));
            }
            let m = self.first_moment.get_mut(name).expect("moment buffers mirror parameters");
            for (mv, gv) in m.data.iter_mut().zip(&gr.data) {
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            }
            let v = self.second_moment.get_mut(name).expect("moment buffers mirror parameters");
            for (vv, gv) in v.data.iter_mut().zip(&gr.data) {
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            }
            let m = self.first_moment.get(name)?;
            let v = self.second_moment.get(name)?;
            for ((pv, mv), vv) in p.data.iter_mut().zip(&m.data).zip(&v.data) {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
