//! Attention-based graph encoder and pointer decoder over roadmap neighbors,
//! with a critic head sharing the decoder context.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::layers::{dense_named, init_attention, init_dense, init_lstm, lstm_step, multi_head_attention};
use crate::autodiff::{Graph, ParamTree, Tensor, Var};
use crate::dpm::LATENT_DIM;
use crate::error::{invalid, Error, Result};

pub const NODE_FEATURES: usize = 4;
/// Pointer logits are squashed to `[-C, C]` before the softmax.
pub const LOGIT_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub embedding: usize,
    pub heads: usize,
}

impl PolicyConfig {
    pub fn full() -> Self {
        Self { embedding: 128, heads: 4 }
    }

    pub fn toy() -> Self {
        Self { embedding: 16, heads: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding == 0 || self.heads == 0 || self.embedding % self.heads != 0 {
            return Err(invalid("heads", format!("{} heads must divide embedding width {}", self.heads, self.embedding)));
        }
        Ok(())
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    #[default]
    Sample,
    Greedy,
}

/// Decoder recurrent state; doubles as the trajectory summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHidden {
    pub h: Tensor,
    pub c: Tensor,
}

impl PolicyHidden {
    pub fn zeros(d: usize) -> Self {
        Self { h: Tensor::zeros(&[1, d]), c: Tensor::zeros(&[1, d]) }
    }
}

/// Everything the decoder needs for one decision besides node features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionInput {
    pub current: usize,
    pub neighbors: Vec<usize>,
    pub mask: Vec<bool>,
    /// Remaining budget over initial budget.
    pub budget_fraction: f64,
    pub z: Vec<f64>,
    pub hidden: PolicyHidden,
}

/// Graph handles produced by [`Policy::decide`].
#[derive(Debug, Clone, Copy)]
pub struct DecisionVars {
    pub probs: Var,
    pub log_probs: Var,
    pub value: Var,
    pub h: Var,
    pub c: Var,
}

/// Plain-value decision output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
    pub hidden: PolicyHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub config: PolicyConfig,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Fresh parameters under the `policy.` prefix. The pointer query
    /// projection starts at zero so the initial policy is uniform.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let d = self.config.embedding;
        let mut p = ParamTree::new();
        init_dense(&mut p, rng, "policy.embed", NODE_FEATURES, d);
        init_attention(&mut p, rng, "policy.self_attn", d);
        init_dense(&mut p, rng, "policy.ffn1", d, d);
        init_dense(&mut p, rng, "policy.ffn2", d, d);
        init_dense(&mut p, rng, "policy.state", d + 1, d);
        init_lstm(&mut p, rng, "policy.lstm", d + LATENT_DIM, d);
        init_attention(&mut p, rng, "policy.cross_attn", d);
        p.insert("policy.pointer.wq", Tensor::zeros(&[d, d]));
        p.insert("policy.pointer.wk", Tensor::glorot(rng, &[d, d], d, d));
        init_dense(&mut p, rng, "policy.critic1", 2 * d, d);
        init_dense(&mut p, rng, "policy.critic2", d, 1);
        p
    }

    /// `n x d` node embeddings: projection, then one self-attention block
    /// with a residual feed-forward layer.
    pub fn encode_graph(&self, g: &mut Graph<'_>, features: &[[f64; 4]]) -> Result<Var> {
        if features.is_empty() {
            return Err(invalid("features", "graph has no nodes"));
        }
        let flat = features.iter().flatten().copied().collect();
        let x = g.constant(Tensor::matrix(features.len(), NODE_FEATURES, flat)?);
        let e = dense_named(g, x, "policy.embed")?;
        let att = multi_head_attention(g, e, e, "policy.self_attn", self.config.heads, None)?;
        let h1 = g.add(e, att)?;
        let f = dense_named(g, h1, "policy.ffn1")?;
        let f = g.relu(f);
        let f = dense_named(g, f, "policy.ffn2")?;
        g.add(h1, f)
    }

    /// Masked pointer distribution over `input.neighbors` and a value
    /// estimate, given the node embeddings.
    pub fn decide(&self, g: &mut Graph<'_>, embeddings: Var, input: &DecisionInput) -> Result<DecisionVars> {
        let d = self.config.embedding;
        if input.neighbors.is_empty() || input.neighbors.len() != input.mask.len() {
            return Err(invalid("mask", format!("{} neighbors, {} mask entries", input.neighbors.len(), input.mask.len())));
        }
        if !input.mask.iter().any(|m| *m) {
            return Err(Error::NoFeasibleAction { node: input.current });
        }
        if input.z.len() != LATENT_DIM {
            return Err(invalid("z", format!("expected {LATENT_DIM} values, got {}", input.z.len())));
        }
        let cur = g.gather_rows(embeddings, &[input.current])?;
        let budget = g.constant(Tensor::row(vec![input.budget_fraction]));
        let state_in = g.concat_cols(&[cur, budget])?;
        let state = dense_named(g, state_in, "policy.state")?;
        let z = g.constant(Tensor::row(input.z.clone()));
        let lstm_in = g.concat_cols(&[state, z])?;
        let h0 = g.constant(input.hidden.h.clone());
        let c0 = g.constant(input.hidden.c.clone());
        let (h, c) = lstm_step(g, lstm_in, h0, c0, "policy.lstm")?;

        let nbrs = g.gather_rows(embeddings, &input.neighbors)?;
        let cross = multi_head_attention(g, h, nbrs, "policy.cross_attn", self.config.heads, Some(&input.mask))?;
        let ctx = g.add(h, cross)?;

        let wq = g.param("policy.pointer.wq")?;
        let wk = g.param("policy.pointer.wk")?;
        let q = g.matmul(ctx, wq)?;
        let k = g.matmul(nbrs, wk)?;
        let logits = g.matmul_nt(q, k)?;
        let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
        let logits = g.tanh(logits);
        let logits = g.scale(logits, LOGIT_CLIP);
        let log_probs = g.log_softmax(logits, Some(input.mask.clone()))?;
        let probs = g.softmax(logits, Some(input.mask.clone()))?;

        let critic_in = g.concat_cols(&[ctx, h])?;
        let v = dense_named(g, critic_in, "policy.critic1")?;
        let v = g.relu(v);
        let value = dense_named(g, v, "policy.critic2")?;
        Ok(DecisionVars { probs, log_probs, value, h, c })
    }

    /// Inference pass: encode the graph and decide once.
    pub fn forward(&self, params: &ParamTree, features: &[[f64; 4]], input: &DecisionInput) -> Result<Decision> {
        let mut g = Graph::inference(params);
        let emb = self.encode_graph(&mut g, features)?;
        let out = self.decide(&mut g, emb, input)?;
        Ok(Decision {
            probs: g.value(out.probs).data.clone(),
            log_probs: g.value(out.log_probs).data.clone(),
            value: g.scalar(out.value),
            hidden: PolicyHidden { h: g.value(out.h).clone(), c: g.value(out.c).clone() },
        })
    }
}

/// Chooses a neighbor slot: sampled from `probs`, or the argmax with the
/// lowest index winning ties.
pub fn act<R: Rng + ?Sized>(probs: &[f64], mode: ActionMode, rng: &mut R) -> usize {
    match mode {
        ActionMode::Greedy => {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
        ActionMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
            last
        }
    }
}
