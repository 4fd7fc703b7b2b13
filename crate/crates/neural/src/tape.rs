//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! Every value on the tape is a matrix; rows are batch entries. Leaves are
//! either parameters (identified by index, borrowed) or constants. Operations
//! record what they need for the backward pass.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

/// Element type usable on the tape. `f32` is used for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + FromPrimitive + AddAssign + Sum + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl<T> Scalar for T where
    T: Float + LinalgScalar + ScalarOperand + FromPrimitive + AddAssign + Sum + Debug + Send + Sync + 'static
{
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'a, T> {
    Owned(Array2<T>),
    Borrowed(&'a Array2<T>),
}

impl<T> Value<'_, T> {
    fn view(&self) -> ArrayView2<'_, T> {
        match self {
            Value::Owned(a) => a.view(),
            Value::Borrowed(a) => a.view(),
        }
    }
}

/// Inputs of one additive attention evaluation. Encoder rows are stored
/// position-major: row `t * enc_batch + b`. With `enc_batch == 1` one source
/// is shared by every decoder row.
struct AttentionCache<T> {
    enc_proj: Var,
    enc_out: Var,
    dec_proj: Var,
    v: Var,
    enc_batch: usize,
    lens: Vec<usize>,
    /// tanh activations, row `t * batch + b`
    act: Array2<T>,
    weights: Array2<T>,
}

enum Op<T> {
    Param(usize),
    Const,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Array2<T>),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    VStack(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    /// `m * new + (1 - m) * prev` with a per-row 0/1 mask.
    Blend(Var, Var, Vec<bool>),
    Attention(Box<AttentionCache<T>>),
    /// Summed weighted negative log likelihood of `targets`.
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
}

struct Node<'a, T> {
    value: Value<'a, T>,
    op: Op<T>,
    grad: bool,
}

/// The tape. Values can be inspected with [`Tape::value`] at any time.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    attention_dev: f64,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Numerically stable softmax of one row in f64.
pub fn softmax_row<T: Scalar>(row: impl IntoIterator<Item = T>) -> Vec<f64> {
    let xs: Vec<f64> = row.into_iter().map(Scalar::f64).collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            attention_dev: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest |Σ weights - 1| over all attention evaluations so far.
    pub fn attention_deviation(&self) -> f64 {
        self.attention_dev
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let grad = inputs.iter().any(|v| self.nodes[v.0].grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize, value: &'a Array2<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Param(index),
            grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Const,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn borrowed(&mut self, value: &'a Array2<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Const,
            grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        self.nodes[v.0].value.view()
    }

    pub fn to_owned(&self, v: Var) -> Array2<T> {
        self.value(v).to_owned()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let out = &self.value(a) + &self.value(bias);
        self.push(out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) + &self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) * &self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = &self.value(a) * k;
        self.push(out, Op::Scale(a, k), &[a])
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Array2<T>) -> Var {
        let out = &self.value(a) * &mask;
        self.push(out, Op::MulConst(a, mask), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let out = self.value(a).mapv(|x| one / (one + (-x).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(Float::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concatenate(Axis(1), &views).expect("equal row counts");
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    /// Row-wise concatenation.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concatenate(Axis(0), &views).expect("equal column counts");
        self.push(out, Op::VStack(parts.to_vec()), parts)
    }

    /// Columns `start .. start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::Slice(a, start), &[a])
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let out = self.value(table).select(Axis(0), ids);
        self.push(out, Op::Gather(table, ids.to_vec()), &[table])
    }

    /// Per row: `new` where `mask` is set, otherwise `prev`.
    pub fn blend(&mut self, new: Var, prev: Var, mask: &[bool]) -> Var {
        let mut out = self.to_owned(prev);
        let nv = self.value(new);
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).assign(&nv.row(r));
            }
        }
        self.push(out, Op::Blend(new, prev, mask.to_vec()), &[new, prev])
    }

    /// Additive attention. `enc_proj` (rows `t * enc_batch + b`, width a) is
    /// the projected encoder output, `enc_out` the raw outputs, `dec_proj`
    /// (`batch × a`) the projected decoder state and `v` an `a × 1` column.
    /// Positions `t >= lens[b]` are excluded. Returns the context
    /// (`batch × width(enc_out)`); the weights are available via
    /// [`Tape::attention_weights`].
    pub fn attention(&mut self, enc_proj: Var, enc_out: Var, dec_proj: Var, v: Var, lens: &[usize]) -> Var {
        let ep = self.value(enc_proj);
        let eo = self.value(enc_out);
        let dp = self.value(dec_proj);
        let vv = self.value(v);
        let batch = dp.nrows();
        let a_dim = dp.ncols();
        let longest = lens.iter().copied().max().unwrap_or(0);
        let enc_batch = if ep.nrows().is_multiple_of(batch) && ep.nrows() / batch >= longest {
            batch
        } else {
            1
        };
        let steps = ep.nrows() / enc_batch;
        assert!(lens.iter().all(|&l| l >= 1), "attention over an empty source");
        let mut act = Array2::<T>::zeros((steps * batch, a_dim));
        let mut weights = Array2::<T>::zeros((batch, steps));
        let mut ctx = Array2::<T>::zeros((batch, eo.ncols()));
        let mut worst: f64 = 0.0;
        for b in 0..batch {
            let eb = if enc_batch == 1 { 0 } else { b };
            let mut scores = Vec::with_capacity(lens[b]);
            for t in 0..lens[b] {
                let mut row = act.row_mut(t * batch + b);
                Zip::from(&mut row)
                    .and(ep.row(t * enc_batch + eb))
                    .and(dp.row(b))
                    .for_each(|u, &e, &d| *u = (e + d).tanh());
                scores.push(row.iter().zip(vv.column(0)).map(|(&u, &w)| u * w).sum::<T>());
            }
            let w = softmax_row(scores);
            worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            for (t, &wt) in w.iter().enumerate() {
                weights[(b, t)] = T::of(wt);
                let wt = T::of(wt);
                Zip::from(ctx.row_mut(b))
                    .and(eo.row(t * enc_batch + eb))
                    .for_each(|c, &h| *c += wt * h);
            }
        }
        self.attention_dev = self.attention_dev.max(worst);
        let cache = AttentionCache {
            enc_proj,
            enc_out,
            dec_proj,
            v,
            enc_batch,
            lens: lens.to_vec(),
            act,
            weights,
        };
        self.push(ctx, Op::Attention(Box::new(cache)), &[enc_proj, enc_out, dec_proj, v])
    }

    /// Weights (`batch × steps`) of an attention node.
    pub fn attention_weights(&self, ctx: Var) -> Option<ArrayView2<'_, T>> {
        match &self.nodes[ctx.0].op {
            Op::Attention(c) => Some(c.weights.view()),
            _ => None,
        }
    }

    /// `Σ_b weights[b] · -ln softmax(logits[b])[targets[b]]` as a `1 × 1`
    /// value; the softmax is evaluated in f64.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let l = self.value(logits);
        let mut probs = Array2::<f64>::zeros(l.raw_dim());
        let mut total = 0.0;
        for (b, row) in l.rows().into_iter().enumerate() {
            let p = softmax_row(row.iter().copied());
            if weights[b] != 0.0 {
                total -= weights[b] * p[targets[b]].max(f64::MIN_POSITIVE).ln();
            }
            probs.row_mut(b).assign(&ndarray::Array1::from(p));
        }
        let out = Array2::from_elem((1, 1), T::of(total));
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            probs,
        };
        self.push(out, op, &[logits])
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf,
    /// indexed by parameter number. Parameters that do not influence the loss
    /// get `None`.
    pub fn backward(&self, loss: Var, n_params: usize) -> Vec<Option<Array2<T>>> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut out: Vec<Option<Array2<T>>> = (0..n_params).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.grad {
                continue;
            }
            let mut acc = |v: Var, d: Array2<T>| {
                if !self.nodes[v.0].grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => *e += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Param(k) => match &mut out[*k] {
                    Some(e) => *e += &g,
                    slot => *slot = Some(g),
                },
                Op::Const => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::AddBias(a, bias) => {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &self.value(*b));
                    acc(*b, &g * &self.value(*a));
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::MulConst(a, m) => acc(*a, g * m),
                Op::Sigmoid(a) => {
                    let y = node.value.view();
                    let one = T::one();
                    acc(*a, Zip::from(&g).and(&y).map_collect(|&g, &y| g * y * (one - y)));
                }
                Op::Tanh(a) => {
                    let y = node.value.view();
                    let one = T::one();
                    acc(*a, Zip::from(&g).and(&y).map_collect(|&g, &y| g * (one - y * y)));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::VStack(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::Slice(a, start) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::Gather(table, ids) => {
                    let mut d = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(r);
                    }
                    acc(*table, d);
                }
                Op::Blend(new, prev, mask) => {
                    let mut dn = g.clone();
                    let mut dp = g;
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            dp.row_mut(r).fill(T::zero());
                        } else {
                            dn.row_mut(r).fill(T::zero());
                        }
                    }
                    acc(*new, dn);
                    acc(*prev, dp);
                }
                Op::Attention(c) => {
                    let (d_ep, d_eo, d_dp, d_v) = self.attention_backward(c, &g);
                    acc(c.enc_proj, d_ep);
                    acc(c.enc_out, d_eo);
                    acc(c.dec_proj, d_dp);
                    acc(c.v, d_v);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let scale = g[(0, 0)].f64();
                    let mut d = Array2::<T>::zeros(probs.raw_dim());
                    for (b, &t) in targets.iter().enumerate() {
                        if weights[b] == 0.0 {
                            continue;
                        }
                        let k = scale * weights[b];
                        for (j, &p) in probs.row(b).iter().enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[(b, j)] = T::of(k * (p - onehot));
                        }
                    }
                    acc(*logits, d);
                }
            }
        }
        out
    }

    fn attention_backward(&self, c: &AttentionCache<T>, g: &Array2<T>) -> (Array2<T>, Array2<T>, Array2<T>, Array2<T>) {
        let eo = self.value(c.enc_out);
        let vv = self.value(c.v);
        let batch = g.nrows();
        let mut d_ep = Array2::<T>::zeros(self.value(c.enc_proj).raw_dim());
        let mut d_eo = Array2::<T>::zeros(eo.raw_dim());
        let mut d_dp = Array2::<T>::zeros(self.value(c.dec_proj).raw_dim());
        let mut d_v = Array2::<T>::zeros(vv.raw_dim());
        let one = T::one();
        for b in 0..batch {
            let eb = if c.enc_batch == 1 { 0 } else { b };
            let n = c.lens[b];
            let gw: Vec<T> = (0..n).map(|t| g.row(b).dot(&eo.row(t * c.enc_batch + eb))).collect();
            let mean: T = (0..n).map(|t| c.weights[(b, t)] * gw[t]).sum();
            for t in 0..n {
                let w = c.weights[(b, t)];
                let row = t * c.enc_batch + eb;
                Zip::from(d_eo.row_mut(row))
                    .and(g.row(b))
                    .for_each(|d, &gc| *d += w * gc);
                let gs = w * (gw[t] - mean);
                let u = c.act.row(t * batch + b);
                Zip::from(d_v.column_mut(0)).and(&u).for_each(|d, &u| *d += gs * u);
                let pre: Vec<T> = u
                    .iter()
                    .zip(vv.column(0))
                    .map(|(&u, &v)| gs * v * (one - u * u))
                    .collect();
                for (k, &p) in pre.iter().enumerate() {
                    d_ep[(row, k)] += p;
                    d_dp[(b, k)] += p;
                }
            }
        }
        (d_ep, d_eo, d_dp, d_v)
    }
}
