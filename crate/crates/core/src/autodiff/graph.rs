//! Tape of tensor operations with a reverse sweep.
//!
//! Every operation appends a node holding its forward value. Parameters are
//! borrowed from a [`ParamTree`] rather than copied; [`Graph::backward`]
//! returns gradients keyed by parameter name. Nodes that do not depend on a
//! parameter are skipped during the reverse sweep.

use std::collections::HashMap;

use super::tensor::{ParamTree, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Softmax(Var, Option<Vec<bool>>),
    LogSoftmax(Var, Option<Vec<bool>>),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Crop2d(Var),
}

#[derive(Debug)]
struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamTree,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<String, Var>,
    trainable: bool,
}

fn shape_err(op: &'static str, lhs: &'static str, l: &Tensor, rhs: &'static str, r: &Tensor) -> Error {
    Error::Shape { op, lhs, lhs_shape: l.shape.clone(), rhs, rhs_shape: r.shape.clone() }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamTree) -> Self {
        Self { params, nodes: Vec::with_capacity(256), param_vars: HashMap::new(), trainable: true }
    }

    /// Graph whose parameters are treated as constants.
    pub fn inference(params: &'p ParamTree) -> Self {
        Self { trainable: false, ..Self::new(params) }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let tensor = self.params.get(name)?;
        self.nodes.push(Node {
            value: Value::Borrowed(tensor),
            op: Op::Param(name.to_string()),
            needs_grad: self.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(shape_err("matmul", "lhs", ta, "rhs", tb));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&ta.data, &tb.data, &mut out, m, k, n);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T` for `a: m x k`, `b: n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[1] {
            return Err(shape_err("matmul_nt", "lhs", ta, "rhs", tb));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[0]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ta.data[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &tb.data[j * k..(j + 1) * k]);
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        if tb.len() != n || ta.len() % n.max(1) != 0 {
            return Err(shape_err("add_row", "input", ta, "bias", tb));
        }
        let mut data = ta.data.clone();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&tb.data).for_each(|(x, b)| *x += b);
        }
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddRow(a, bias), &[a, bias]))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(name, "lhs", ta, "rhs", tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "min", f64::min, Op::Min(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data.iter().map(|x| f(*x)).collect();
        let shape = t.shape.clone();
        self.push(Tensor { shape, data }, op, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows || t.shape.len() > 2 {
                return Err(shape_err("concat_cols", "first", self.value(parts[0]), "part", t));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        Ok(self.push(Tensor { shape: vec![rows, total], data }, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if start + len > cols {
            return Err(invalid("slice_cols", format!("columns {start}..{} of {cols}", start + len)));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * cols + start..r * cols + start + len]);
        }
        Ok(self.push(Tensor { shape: vec![rows, len], data }, Op::SliceCols(a, start), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(invalid("gather_rows", format!("row {r} of {n}")));
            }
            data.extend_from_slice(&t.data[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(Tensor { shape: vec![rows.len(), cols], data }, Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(invalid("reshape", format!("{:?} -> {shape:?}", t.shape)));
        }
        let data = t.data.clone();
        Ok(self.push(Tensor { shape: shape.to_vec(), data }, Op::Reshape(a), &[a]))
    }

    fn check_mask(&self, a: Var, mask: &Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = mask {
            let t = self.value(a);
            if m.len() != t.cols() {
                return Err(invalid("mask", format!("length {} for {} columns", m.len(), t.cols())));
            }
            if !m.iter().any(|x| *x) {
                return Err(Error::Degenerate("softmax with every entry masked".into()));
            }
        }
        Ok(())
    }

    /// Row-wise softmax; masked-out columns get probability 0.
    pub fn softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        self.check_mask(a, &mask)?;
        let t = self.value(a);
        let cols = t.cols();
        let mut data = t.data.clone();
        for row in data.chunks_mut(cols) {
            softmax_row(row, mask.as_deref());
        }
        let shape = t.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a, mask), &[a]))
    }

    /// Row-wise log-softmax; masked-out columns are reported as 0.
    pub fn log_softmax(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        self.check_mask(a, &mask)?;
        let t = self.value(a);
        let cols = t.cols();
        let mut data = t.data.clone();
        for row in data.chunks_mut(cols) {
            let keep = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
            let max = (0..cols).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..cols).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if keep(j) { *v - lse } else { 0.0 };
            }
        }
        let shape = t.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::LogSoftmax(a, mask), &[a]))
    }

    /// 2-D convolution of a `C x H x W` input with `O x C x kh x kw` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape.len() != 3 || tw.shape.len() != 4 || tw.shape[1] != tx.shape[0] {
            return Err(shape_err("conv2d", "input", tx, "kernels", tw));
        }
        if tb.len() != tw.shape[0] {
            return Err(shape_err("conv2d", "kernels", tw, "bias", tb));
        }
        let geom = ConvGeom::forward(&tx.shape, &tw.shape, stride, pad)?;
        let mut out = vec![0.0; geom.out_len()];
        geom.conv(&tx.data, &tw.data, &tb.data, &mut out);
        let shape = vec![geom.o, geom.oh, geom.ow];
        Ok(self.push(Tensor { shape, data: out }, Op::Conv2d { x, w, b, stride, pad }, &[x, w, b]))
    }

    /// Transposed convolution of a `C x H x W` input with `C x O x kh x kw`
    /// kernels; output side `(H - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape.len() != 3 || tw.shape.len() != 4 || tw.shape[0] != tx.shape[0] {
            return Err(shape_err("conv_transpose2d", "input", tx, "kernels", tw));
        }
        if tb.len() != tw.shape[1] {
            return Err(shape_err("conv_transpose2d", "kernels", tw, "bias", tb));
        }
        let geom = ConvGeom::transposed(&tx.shape, &tw.shape, stride, pad)?;
        let mut out = vec![0.0; geom.out_len()];
        geom.conv_t(&tx.data, &tw.data, &tb.data, &mut out);
        let shape = vec![geom.o, geom.oh, geom.ow];
        Ok(self.push(Tensor { shape, data: out }, Op::ConvTranspose2d { x, w, b, stride, pad }, &[x, w, b]))
    }

    /// Top-left aligned crop or zero-pad of a `C x H x W` tensor.
    pub fn crop2d(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape.len() != 3 {
            return Err(invalid("crop2d", format!("expected C x H x W, got {:?}", t.shape)));
        }
        let (c, ih, iw) = (t.shape[0], t.shape[1], t.shape[2]);
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for r in 0..h.min(ih) {
                for col in 0..w.min(iw) {
                    data[(ch * h + r) * w + col] = t.data[(ch * ih + r) * iw + col];
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![c, h, w], data }, Op::Crop2d(a), &[a]))
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every
    /// parameter touched by the graph (zeros where disconnected).
    pub fn backward(&self, loss: Var) -> Result<ParamTree> {
        if self.value(loss).len() != 1 {
            return Err(invalid("loss", format!("must be scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = ParamTree::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                if let Op::Param(name) = &node.op {
                    out.insert(name.clone(), Tensor::zeros(&node.value.get().shape));
                }
                continue;
            };
            self.propagate(i, g, &mut grads, &mut out);
        }
        // parameters registered after the loss node
        for node in &self.nodes[loss.0 + 1..] {
            if let (Op::Param(name), true) = (&node.op, node.needs_grad) {
                out.insert(name.clone(), Tensor::zeros(&node.value.get().shape));
            }
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>], out: &mut ParamTree) {
        let node = &self.nodes[i];
        let y = node.value.get();
        let val = |v: Var| self.nodes[v.0].value.get();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.get().len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(name) => {
                out.insert(name.clone(), Tensor { shape: y.shape.clone(), data: g });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                if wants(*a) {
                    // dA = G B^T
                    acc(*a, &|s| {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                s[i * k + p] += dot(gr, &tb.data[p * n..(p + 1) * n]);
                            }
                        }
                    });
                }
                if wants(*b) {
                    // dB = A^T G
                    acc(*b, &|s| {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ta.data[i * k + p];
                                if av != 0.0 {
                                    axpy(av, gr, &mut s[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    });
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[0]);
                acc(*a, &|s| {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(g[i * n + j], &tb.data[j * k..(j + 1) * k], &mut s[i * k..(i + 1) * k]);
                        }
                    }
                });
                acc(*b, &|s| {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(g[i * n + j], &ta.data[i * k..(i + 1) * k], &mut s[j * k..(j + 1) * k]);
                        }
                    }
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, &|s| axpy(1.0, &g, s));
                let n = val(*b).len();
                acc(*b, &|s| {
                    for row in g.chunks(n) {
                        axpy(1.0, row, s);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|s| axpy(1.0, &g, s));
                acc(*b, &|s| axpy(1.0, &g, s));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| axpy(1.0, &g, s));
                acc(*b, &|s| axpy(-1.0, &g, s));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &|s| s.iter_mut().zip(&g).zip(&tb.data).for_each(|((s, g), b)| *s += g * b));
                acc(*b, &|s| s.iter_mut().zip(&g).zip(&ta.data).for_each(|((s, g), a)| *s += g * a));
            }
            Op::Min(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if ta.data[j] <= tb.data[j] {
                            s[j] += g[j];
                        }
                    }
                });
                acc(*b, &|s| {
                    for j in 0..s.len() {
                        if ta.data[j] > tb.data[j] {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|s| axpy(*c, &g, s)),
            Op::Offset(a) => acc(*a, &|s| axpy(1.0, &g, s)),
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if x.data[j] > 0.0 {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * (1.0 - y.data[j] * y.data[j]);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * y.data[j] * (1.0 - y.data[j]);
                }
            }),
            Op::Exp(a) => acc(*a, &|s| {
                for j in 0..s.len() {
                    s[j] += g[j] * y.data[j];
                }
            }),
            Op::Ln(a) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / x.data[j];
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(*a, &|s| {
                    for j in 0..s.len() {
                        if x.data[j] >= *lo && x.data[j] <= *hi {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, &|s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &|s| {
                        for r in 0..rows {
                            axpy(1.0, &g[r * total + offset..r * total + offset + w], &mut s[r * w..(r + 1) * w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = val(*a).cols();
                let (rows, len) = (y.rows(), y.cols());
                acc(*a, &|s| {
                    for r in 0..rows {
                        axpy(1.0, &g[r * len..(r + 1) * len], &mut s[r * cols + start..r * cols + start + len]);
                    }
                });
            }
            Op::GatherRows(a, rows) => {
                let cols = y.cols();
                acc(*a, &|s| {
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(1.0, &g[k * cols..(k + 1) * cols], &mut s[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &|s| axpy(1.0, &g, s)),
            Op::Softmax(a, mask) => {
                let cols = y.cols();
                acc(*a, &|s| {
                    for (r, (yr, gr)) in y.data.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        let inner = dot(yr, gr);
                        for j in 0..cols {
                            if mask.as_ref().map_or(true, |m| m[j]) {
                                s[r * cols + j] += yr[j] * (gr[j] - inner);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(a, mask) => {
                let cols = y.cols();
                acc(*a, &|s| {
                    for (r, (yr, gr)) in y.data.chunks(cols).zip(g.chunks(cols)).enumerate() {
                        let keep = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
                        let gsum: f64 = (0..cols).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                        for j in (0..cols).filter(|&j| keep(j)) {
                            s[r * cols + j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (tx, tw) = (val(*x), val(*w));
                let geom = ConvGeom::forward(&tx.shape, &tw.shape, *stride, *pad).expect("validated");
                acc(*x, &|s| geom.conv_grad_input(&g, &tw.data, s));
                acc(*w, &|s| geom.conv_grad_kernel(&g, &tx.data, s));
                acc(*b, &|s| geom.grad_bias(&g, s));
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let (tx, tw) = (val(*x), val(*w));
                let geom = ConvGeom::transposed(&tx.shape, &tw.shape, *stride, *pad).expect("validated");
                acc(*x, &|s| geom.conv_t_grad_input(&g, &tw.data, s));
                acc(*w, &|s| geom.conv_t_grad_kernel(&g, &tx.data, s));
                acc(*b, &|s| geom.grad_bias(&g, s));
            }
            Op::Crop2d(a) => {
                let src = &val(*a).shape;
                let (c, ih, iw) = (src[0], src[1], src[2]);
                let (h, w) = (y.shape[1], y.shape[2]);
                acc(*a, &|s| {
                    for ch in 0..c {
                        for r in 0..h.min(ih) {
                            for col in 0..w.min(iw) {
                                s[(ch * ih + r) * iw + col] += g[(ch * h + r) * w + col];
                            }
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &mut [f64], mask: Option<&[bool]>) {
    let keep = |j: usize| mask.map_or(true, |m| m[j]);
    let max = (0..row.len()).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        *v = if keep(j) { (*v - max).exp() } else { 0.0 };
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// Index geometry shared by the convolution kernels.
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn forward(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = (x[0], x[1], x[2]);
        let (o, kh, kw) = (k[0], k[2], k[3]);
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(invalid("conv2d", format!("input {x:?} too small for kernel {k:?} (stride {stride}, pad {pad})")));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { c, h, w, o, kh, kw, oh, ow, stride, pad })
    }

    fn transposed(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = (x[0], x[1], x[2]);
        let (o, kh, kw) = (k[1], k[2], k[3]);
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if stride == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(invalid("conv_transpose2d", format!("input {x:?} kernel {k:?} (stride {stride}, pad {pad})")));
        }
        Ok(Self { c, h, w, o, kh, kw, oh: full_h - 2 * pad, ow: full_w - 2 * pad, stride, pad })
    }

    fn out_len(&self) -> usize {
        self.o * self.oh * self.ow
    }

    /// Calls `f(input_index, kernel_index, output_index)` for every tap that
    /// lands inside the input. Kernel layout `O x C x kh x kw`.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        for o in 0..self.o {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let ki = ((o * self.c + c) * self.kh + ky) * self.kw + kx;
                        for oy in 0..self.oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            for ox in 0..self.ow {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                let xi = (c * self.h + iy as usize) * self.w + ix as usize;
                                f(xi, ki, (o * self.oh + oy) * self.ow + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Same for transposed convolution, kernel layout `C x O x kh x kw`.
    #[inline]
    fn taps_t(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c {
            for o in 0..self.o {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let ki = ((c * self.o + o) * self.kh + ky) * self.kw + kx;
                        for iy in 0..self.h {
                            let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                            if oy < 0 || oy >= self.oh as isize {
                                continue;
                            }
                            for ix in 0..self.w {
                                let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                                if ox < 0 || ox >= self.ow as isize {
                                    continue;
                                }
                                let xi = (c * self.h + iy) * self.w + ix;
                                f(xi, ki, (o * self.oh + oy as usize) * self.ow + ox as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    fn add_bias(&self, b: &[f64], out: &mut [f64]) {
        let plane = self.oh * self.ow;
        for (o, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[o]);
        }
    }

    fn grad_bias(&self, g: &[f64], s: &mut [f64]) {
        let plane = self.oh * self.ow;
        for (o, chunk) in g.chunks(plane).enumerate() {
            s[o] += chunk.iter().sum::<f64>();
        }
    }

    fn conv(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        self.taps(|xi, ki, oi| out[oi] += x[xi] * w[ki]);
        self.add_bias(b, out);
    }

    fn conv_grad_input(&self, g: &[f64], w: &[f64], s: &mut [f64]) {
        self.taps(|xi, ki, oi| s[xi] += g[oi] * w[ki]);
    }

    fn conv_grad_kernel(&self, g: &[f64], x: &[f64], s: &mut [f64]) {
        self.taps(|xi, ki, oi| s[ki] += g[oi] * x[xi]);
    }

    fn conv_t(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        self.taps_t(|xi, ki, oi| out[oi] += x[xi] * w[ki]);
        self.add_bias(b, out);
    }

    fn conv_t_grad_input(&self, g: &[f64], w: &[f64], s: &mut [f64]) {
        self.taps_t(|xi, ki, oi| s[xi] += g[oi] * w[ki]);
    }

    fn conv_t_grad_kernel(&self, g: &[f64], x: &[f64], s: &mut [f64]) {
        self.taps_t(|xi, ki, oi| s[ki] += g[oi] * x[xi]);
    }
}
