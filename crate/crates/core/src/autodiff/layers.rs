//! Network layers built on [`Graph`] operations, plus their initializers.
//!
//! Parameters are named `{prefix}.{part}` inside a [`ParamTree`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamTree, Tensor};
use crate::error::{invalid, Result};

/// `x W + b` for `x: m x in`, `W: in x out`.
pub fn dense(g: &mut Graph<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub fn dense_named(g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    dense(g, x, w, b)
}

pub fn conv2d(g: &mut Graph<'_>, x: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv2d(x, kernels, bias, stride, pad)
}

pub fn conv2d_named(g: &mut Graph<'_>, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    g.conv2d(x, w, b, stride, pad)
}

pub fn conv2d_transposed(g: &mut Graph<'_>, x: Var, kernels: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
    g.conv_transpose2d(x, kernels, bias, stride, pad)
}

pub fn conv2d_transposed_named(g: &mut Graph<'_>, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    g.conv_transpose2d(x, w, b, stride, pad)
}

pub fn softmax(g: &mut Graph<'_>, logits: Var) -> Result<Var> {
    g.softmax(logits, None)
}

/// One LSTM step on `1 x in` input with `1 x H` state.
/// Gate order in the packed weights is input, forget, cell, output.
pub fn lstm_step(g: &mut Graph<'_>, x: Var, h: Var, c: Var, prefix: &str) -> Result<(Var, Var)> {
    let wx = g.param(&format!("{prefix}.wx"))?;
    let wh = g.param(&format!("{prefix}.wh"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let hidden = g.shape(h)[1];
    let xi = g.matmul(x, wx)?;
    let hh = g.matmul(h, wh)?;
    let pre = g.add(xi, hh)?;
    let pre = g.add_row(pre, b)?;
    let i = g.slice_cols(pre, 0, hidden)?;
    let f = g.slice_cols(pre, hidden, hidden)?;
    let cand = g.slice_cols(pre, 2 * hidden, hidden)?;
    let o = g.slice_cols(pre, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next);
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// Multi-head scaled dot-product attention.
///
/// `queries: m x d`, `keys_values: n x d`. `mask` (length n) hides keys.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    queries: Var,
    keys_values: Var,
    prefix: &str,
    heads: usize,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let d = g.shape(queries)[1];
    if heads == 0 || d % heads != 0 {
        return Err(invalid("heads", format!("{heads} does not divide width {d}")));
    }
    let wq = g.param(&format!("{prefix}.wq"))?;
    let wk = g.param(&format!("{prefix}.wk"))?;
    let wv = g.param(&format!("{prefix}.wv"))?;
    let wo = g.param(&format!("{prefix}.wo"))?;
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(keys_values, wk)?;
    let v = g.matmul(keys_values, wv)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores, mask.map(<[bool]>::to_vec))?;
        outs.push(g.matmul(weights, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(joined, wo)
}

pub fn init_dense<R: Rng + ?Sized>(tree: &mut ParamTree, rng: &mut R, prefix: &str, fan_in: usize, fan_out: usize) {
    tree.insert(format!("{prefix}.w"), Tensor::glorot(rng, &[fan_in, fan_out], fan_in, fan_out));
    tree.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]));
}

pub fn init_conv2d<R: Rng + ?Sized>(tree: &mut ParamTree, rng: &mut R, prefix: &str, in_ch: usize, out_ch: usize, k: usize) {
    let shape = [out_ch, in_ch, k, k];
    tree.insert(format!("{prefix}.w"), Tensor::glorot(rng, &shape, in_ch * k * k, out_ch * k * k));
    tree.insert(format!("{prefix}.b"), Tensor::zeros(&[out_ch]));
}

pub fn init_conv2d_transposed<R: Rng + ?Sized>(
    tree: &mut ParamTree,
    rng: &mut R,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
) {
    let shape = [in_ch, out_ch, k, k];
    tree.insert(format!("{prefix}.w"), Tensor::glorot(rng, &shape, in_ch * k * k, out_ch * k * k));
    tree.insert(format!("{prefix}.b"), Tensor::zeros(&[out_ch]));
}

/// Forget-gate bias starts at 1.
pub fn init_lstm<R: Rng + ?Sized>(tree: &mut ParamTree, rng: &mut R, prefix: &str, input: usize, hidden: usize) {
    tree.insert(format!("{prefix}.wx"), Tensor::glorot(rng, &[input, 4 * hidden], input, hidden));
    tree.insert(format!("{prefix}.wh"), Tensor::glorot(rng, &[hidden, 4 * hidden], hidden, hidden));
    let mut b = Tensor::zeros(&[4 * hidden]);
    b.data[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
    tree.insert(format!("{prefix}.b"), b);
}

pub fn init_attention<R: Rng + ?Sized>(tree: &mut ParamTree, rng: &mut R, prefix: &str, d: usize) {
    for part in ["wq", "wk", "wv", "wo"] {
        tree.insert(format!("{prefix}.{part}"), Tensor::glorot(rng, &[d, d], d, d));
    }
}
