use approx::assert_abs_diff_eq;
use rand::Rng;

use super::layers::*;
use super::*;
use crate::seed::rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor { shape: shape.to_vec(), data: (0..shape.iter().product()).map(|_| r.gen_range(-1.0..1.0)).collect() }
}

/// Fixed random projection turning any output into a scalar loss.
fn project(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(random_tensor(&mut r, &shape));
    let prod = g.mul(y, w).unwrap();
    g.sum(prod)
}

fn assert_check<F>(params: &ParamTree, loss: F)
where
    F: Fn(&mut Graph<'_>) -> crate::Result<Var>,
{
    let report = check_gradients(params, 10, EPS, TOL, &mut rng(99), loss).unwrap();
    assert!(report.passed(), "{:?}", report.mismatches);
}

#[test]
fn dense_identity_passes_through() {
    let mut p = ParamTree::new();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data[i * 4] = 1.0;
    }
    p.insert("l.w", eye);
    p.insert("l.b", Tensor::zeros(&[3]));
    let mut g = Graph::new(&p);
    let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap());
    let y = dense_named(&mut g, x, "l").unwrap();
    assert_eq!(g.value(y).data, g.value(x).data);
}

#[test]
fn softmax_uniform_logits() {
    let p = ParamTree::new();
    let mut g = Graph::new(&p);
    let x = g.constant(Tensor::row(vec![0.7; 20]));
    let y = softmax(&mut g, x).unwrap();
    for v in &g.value(y).data {
        assert_abs_diff_eq!(*v, 0.05, epsilon = 1e-15);
    }
}

#[test]
fn masked_softmax_zeroes_hidden_entries() {
    let p = ParamTree::new();
    let mut g = Graph::new(&p);
    let x = g.constant(Tensor::row(vec![5.0, 1.0, 2.0]));
    let y = g.softmax(x, Some(vec![false, true, true])).unwrap();
    let v = &g.value(y).data;
    assert_eq!(v[0], 0.0);
    assert_abs_diff_eq!(v[1] + v[2], 1.0, epsilon = 1e-15);
    assert!(g.softmax(x, Some(vec![false; 3])).is_err());
}

#[test]
fn conv2d_block_average() {
    let mut p = ParamTree::new();
    p.insert("c.w", Tensor::filled(&[1, 1, 2, 2], 0.25));
    p.insert("c.b", Tensor::zeros(&[1]));
    let mut g = Graph::new(&p);
    let input: Vec<f64> = (0..16).map(f64::from).collect();
    let x = g.constant(Tensor::new(vec![1, 4, 4], input.clone()).unwrap());
    let y = conv2d_named(&mut g, x, "c", 2, 0).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 2]);
    // hand-computed block means
    let expect = [(0 + 1 + 4 + 5) as f64 / 4.0, 4.5, 10.5, 12.5];
    for (a, b) in g.value(y).data.iter().zip(expect) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
    }
}

#[test]
fn shape_errors_name_operands() {
    let p = ParamTree::new();
    let mut g = Graph::new(&p);
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("lhs") && err.contains("rhs"), "{err}");
}

#[test]
fn sum_and_half_square_gradients() {
    let mut p = ParamTree::new();
    p.insert("w", Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.0]).unwrap());
    let mut g = Graph::new(&p);
    let w = g.param("w").unwrap();
    let s = g.sum(w);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get("w").unwrap().data, vec![1.0; 4]);

    let mut g = Graph::new(&p);
    let w = g.param("w").unwrap();
    let sq = g.square(w);
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.get("w").unwrap().data, p.get("w").unwrap().data);
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut p = ParamTree::new();
    p.insert("a", Tensor::filled(&[2], 1.0));
    p.insert("b", Tensor::filled(&[3], 1.0));
    let mut g = Graph::new(&p);
    let a = g.param("a").unwrap();
    let _b = g.param("b").unwrap();
    let s = g.sum(a);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get("b").unwrap().data, vec![0.0; 3]);
}

#[test]
fn dense_gradient_check() {
    let mut r = rng(1);
    let mut p = ParamTree::new();
    init_dense(&mut p, &mut r, "l", 5, 4);
    p.insert("l.b", random_tensor(&mut r, &[4]));
    let x = random_tensor(&mut r, &[3, 5]);
    assert_check(&p, |g| {
        let x = g.constant(x.clone());
        let y = dense_named(g, x, "l")?;
        let y = g.tanh(y);
        Ok(project(g, y, 2))
    });
}

#[test]
fn conv2d_gradient_check() {
    let mut r = rng(3);
    let mut p = ParamTree::new();
    init_conv2d(&mut p, &mut r, "c", 2, 3, 3);
    p.insert("c.b", random_tensor(&mut r, &[3]));
    p.insert("x", random_tensor(&mut r, &[2, 7, 7]));
    assert_check(&p, |g| {
        let x = g.param("x")?;
        let y = conv2d_named(g, x, "c", 2, 1)?;
        Ok(project(g, y, 4))
    });
}

#[test]
fn conv2d_transposed_gradient_check() {
    let mut r = rng(5);
    let mut p = ParamTree::new();
    init_conv2d_transposed(&mut p, &mut r, "t", 3, 2, 4);
    p.insert("t.b", random_tensor(&mut r, &[2]));
    p.insert("x", random_tensor(&mut r, &[3, 3, 3]));
    assert_check(&p, |g| {
        let x = g.param("x")?;
        let y = conv2d_transposed_named(g, x, "t", 2, 1)?;
        assert_eq!(g.shape(y), &[2, 6, 6]);
        let y = g.crop2d(y, 5, 5)?;
        Ok(project(g, y, 6))
    });
}

#[test]
fn lstm_gradient_check() {
    let mut r = rng(7);
    let mut p = ParamTree::new();
    init_lstm(&mut p, &mut r, "m", 3, 4);
    p.insert("h0", random_tensor(&mut r, &[1, 4]));
    p.insert("c0", random_tensor(&mut r, &[1, 4]));
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[1, 3])).collect();
    assert_check(&p, |g| {
        let mut h = g.param("h0")?;
        let mut c = g.param("c0")?;
        for x in &xs {
            let x = g.constant(x.clone());
            (h, c) = lstm_step(g, x, h, c, "m")?;
        }
        let both = g.concat_cols(&[h, c])?;
        Ok(project(g, both, 8))
    });
}

#[test]
fn attention_gradient_check() {
    let mut r = rng(9);
    let mut p = ParamTree::new();
    init_attention(&mut p, &mut r, "a", 8);
    p.insert("q", random_tensor(&mut r, &[2, 8]));
    p.insert("kv", random_tensor(&mut r, &[5, 8]));
    let mask = [true, false, true, true, true];
    assert_check(&p, |g| {
        let q = g.param("q")?;
        let kv = g.param("kv")?;
        let y = multi_head_attention(g, q, kv, "a", 2, Some(&mask))?;
        Ok(project(g, y, 10))
    });
}

#[test]
fn softmax_cross_entropy_gradient_check() {
    let mut r = rng(11);
    let mut p = ParamTree::new();
    p.insert("z", random_tensor(&mut r, &[3, 6]));
    let mask = vec![true, true, false, true, true, true];
    assert_check(&p, |g| {
        let z = g.param("z")?;
        let lp = g.log_softmax(z, Some(mask.clone()))?;
        let picked = g.slice_cols(lp, 3, 1)?;
        let nll = g.mean(picked);
        let probs = g.softmax(z, Some(mask.clone()))?;
        let ent = g.mul(probs, lp)?;
        let ent = g.sum(ent);
        let ent = g.scale(ent, 0.1);
        g.sub(nll, ent)
    });
}

#[test]
fn elementwise_ops_gradient_check() {
    let mut r = rng(13);
    let mut p = ParamTree::new();
    p.insert("a", random_tensor(&mut r, &[4, 3]));
    p.insert("b", random_tensor(&mut r, &[4, 3]));
    assert_check(&p, |g| {
        let a = g.param("a")?;
        let b = g.param("b")?;
        let e = g.exp(a);
        let s = g.sigmoid(b);
        let m = g.min(e, s)?;
        let off = g.offset(m, 2.0);
        let l = g.ln(off);
        let cl = g.clamp(b, -0.5, 0.5);
        let rows = g.gather_rows(a, &[3, 0, 3])?;
        let rs = g.reshape(rows, &[3, 3])?;
        let t = g.relu(rs);
        let x = project(g, l, 1);
        let y = project(g, cl, 2);
        let z = project(g, t, 3);
        let xy = g.add(x, y)?;
        g.add(xy, z)
    });
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = ParamTree::new();
    p.insert("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
    let before = p.clone();
    let zeros = p.zeros_like();
    adam.step(&mut p, &zeros).unwrap();
    assert_eq!(p, before);
}

#[test]
fn adam_first_step_matches_closed_form() {
    let mut p = ParamTree::new();
    p.insert("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
    let mut grads = ParamTree::new();
    let g = [0.5, -2.0, 1e-3];
    grads.insert("w", Tensor::new(vec![3], g.to_vec()).unwrap());
    let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg, &p).unwrap();
    adam.step(&mut p, &grads).unwrap();
    // m_hat = g, v_hat = g^2 after one step
    for (i, gi) in g.iter().enumerate() {
        let expect = (i + 1) as f64 - 0.1 * gi / (gi.abs() + 1e-8);
        assert_abs_diff_eq!(p.get("w").unwrap().data[i], expect, epsilon = 1e-12);
    }
}

#[test]
fn adam_decay_schedule() {
    let mut p = ParamTree::new();
    p.insert("w", Tensor::zeros(&[1]));
    let grads = p.zeros_like();
    let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
    for _ in 0..64 {
        adam.step(&mut p, &grads).unwrap();
    }
    assert_abs_diff_eq!(adam.learning_rate(), 1e-4 * 0.96 * 0.96, epsilon = 1e-18);

    let config = AdamConfig { decay_clock: DecayClock::Tick, ..AdamConfig::default() };
    let mut adam = Adam::new(config, &p).unwrap();
    for _ in 0..64 {
        adam.step(&mut p, &grads).unwrap();
    }
    assert_eq!(adam.learning_rate(), 1e-4);
    for _ in 0..32 {
        adam.tick();
    }
    assert_abs_diff_eq!(adam.learning_rate(), 1e-4 * 0.96, epsilon = 1e-18);
}

#[test]
fn checkpoint_round_trip() {
    let mut r = rng(21);
    let mut p = ParamTree::new();
    init_dense(&mut p, &mut r, "x", 3, 2);
    init_lstm(&mut p, &mut r, "m", 2, 2);
    let mut buf = Vec::new();
    checkpoint::write_archive(&mut buf, &p, checkpoint::Dtype::F64).unwrap();
    assert_eq!(checkpoint::read_archive(buf.as_slice()).unwrap(), p);

    let mut buf = Vec::new();
    checkpoint::write_archive(&mut buf, &p, checkpoint::Dtype::F32).unwrap();
    let back = checkpoint::read_archive(buf.as_slice()).unwrap();
    for (name, t) in p.iter() {
        for (a, b) in t.data.iter().zip(&back.get(name).unwrap().data) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }
    buf[0] = b'X';
    assert!(checkpoint::read_archive(buf.as_slice()).is_err());
}
