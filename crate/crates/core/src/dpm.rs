//! Dynamics prediction model: a convolutional-recurrent encoder that turns
//! belief grids into a 16-dimensional latent, and a decoder that predicts
//! the next belief mean image from it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{
    conv2d_named, conv2d_transposed_named, dense_named, init_conv2d, init_conv2d_transposed, init_dense, init_lstm,
    lstm_step,
};
use crate::autodiff::{Graph, ParamTree, Tensor, Var};
use crate::belief::BeliefGrid;
use crate::error::{invalid, Error, Result};

pub const LATENT_DIM: usize = 16;
pub const LSTM_HIDDEN: usize = 64;
const C1: usize = 8;
const C2: usize = 16;

/// What the decoder is trained to reproduce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Current,
    Delta,
    #[default]
    Next,
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "delta" => Ok(Self::Delta),
            "next" => Ok(Self::Next),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Current => "current",
            Self::Delta => "delta",
            Self::Next => "next",
        })
    }
}

/// Decoder target (mean channel only) for the given mode.
pub fn target_for_mode(mode: PredictionMode, current: &BeliefGrid, next: &BeliefGrid) -> Result<Vec<f64>> {
    if current.resolution != next.resolution {
        return Err(invalid("target", format!("grid resolutions {} and {} differ", current.resolution, next.resolution)));
    }
    Ok(match mode {
        PredictionMode::Current => current.mean.clone(),
        PredictionMode::Next => next.mean.clone(),
        PredictionMode::Delta => next.mean.iter().zip(&current.mean).map(|(a, b)| a - b).collect(),
    })
}

/// Encoder recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmHidden {
    pub h: Tensor,
    pub c: Tensor,
}

impl Default for DpmHidden {
    fn default() -> Self {
        Self { h: Tensor::zeros(&[1, LSTM_HIDDEN]), c: Tensor::zeros(&[1, LSTM_HIDDEN]) }
    }
}

/// Shape bookkeeping for one grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dpm {
    pub resolution: usize,
    padded: usize,
}

impl Dpm {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(invalid("resolution", "must be >= 2"));
        }
        Ok(Self { resolution, padded: resolution.div_ceil(4) * 4 })
    }

    fn bottleneck(&self) -> usize {
        C2 * (self.padded / 4) * (self.padded / 4)
    }

    /// Fresh parameters under the `dpm.` prefix.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let mut p = ParamTree::new();
        init_conv2d(&mut p, rng, "dpm.conv1", 2, C1, 3);
        init_conv2d(&mut p, rng, "dpm.conv2", C1, C2, 3);
        init_lstm(&mut p, rng, "dpm.lstm", self.bottleneck(), LSTM_HIDDEN);
        init_dense(&mut p, rng, "dpm.latent", LSTM_HIDDEN, LATENT_DIM);
        init_dense(&mut p, rng, "dpm.expand", LATENT_DIM, self.bottleneck());
        init_conv2d_transposed(&mut p, rng, "dpm.up1", C2, C1, 4);
        init_conv2d_transposed(&mut p, rng, "dpm.up2", C1, 1, 4);
        p
    }

    /// `z = tanh(W h' + b)` where `h'` is the LSTM state after consuming the
    /// convolved grid. `grid` holds `2 * R * R` values, mean then variance.
    pub fn encode(&self, g: &mut Graph<'_>, grid: &[f64], h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let r = self.resolution;
        if grid.len() != 2 * r * r {
            return Err(invalid("grid", format!("expected {} values for resolution {r}, got {}", 2 * r * r, grid.len())));
        }
        let x = g.constant(Tensor { shape: vec![2, r, r], data: grid.to_vec() });
        let x = g.crop2d(x, self.padded, self.padded)?;
        let x = conv2d_named(g, x, "dpm.conv1", 2, 1)?;
        let x = g.relu(x);
        let x = conv2d_named(g, x, "dpm.conv2", 2, 1)?;
        let x = g.relu(x);
        let flat = g.reshape(x, &[1, self.bottleneck()])?;
        let (h, c) = lstm_step(g, flat, h, c, "dpm.lstm")?;
        let z = dense_named(g, h, "dpm.latent")?;
        let z = g.tanh(z);
        Ok((z, h, c))
    }

    /// Predicted `1 x R x R` grid.
    pub fn decode(&self, g: &mut Graph<'_>, z: Var) -> Result<Var> {
        if g.shape(z) != [1, LATENT_DIM] {
            return Err(invalid("z", format!("expected shape [1, {LATENT_DIM}], got {:?}", g.shape(z))));
        }
        let q = self.padded / 4;
        let x = dense_named(g, z, "dpm.expand")?;
        let x = g.relu(x);
        let x = g.reshape(x, &[C2, q, q])?;
        let x = conv2d_transposed_named(g, x, "dpm.up1", 2, 1)?;
        let x = g.relu(x);
        let x = conv2d_transposed_named(g, x, "dpm.up2", 2, 1)?;
        g.crop2d(x, self.resolution, self.resolution)
    }

    /// Inference-only encoding step.
    pub fn encode_values(&self, params: &ParamTree, grid: &[f64], hidden: &DpmHidden) -> Result<(Vec<f64>, DpmHidden)> {
        let mut g = Graph::inference(params);
        let h = g.constant(hidden.h.clone());
        let c = g.constant(hidden.c.clone());
        let (z, h, c) = self.encode(&mut g, grid, h, c)?;
        Ok((g.value(z).data.clone(), DpmHidden { h: g.value(h).clone(), c: g.value(c).clone() }))
    }

    pub fn decode_values(&self, params: &ParamTree, z: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference(params);
        let z = g.constant(Tensor::row(z.to_vec()));
        let y = self.decode(&mut g, z)?;
        Ok(g.value(y).data.clone())
    }
}

/// Mean squared error between a predicted grid and a target of equal size.
pub fn dpm_loss(g: &mut Graph<'_>, predicted: Var, target: &[f64]) -> Result<Var> {
    let shape = g.shape(predicted).to_vec();
    let t = Tensor::new(shape, target.to_vec())?;
    let t = g.constant(t);
    let diff = g.sub(predicted, t)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// Plain-value version of [`dpm_loss`].
pub fn mse(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(invalid("mse", format!("lengths {} and {}", predicted.len(), target.len())));
    }
    Ok(predicted.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / predicted.len() as f64)
}
