//! Tape-based reverse-mode automatic differentiation over f64 tensors.
//!
//! Each forward op appends one node holding its output values, parent ids,
//! and whatever the backward rule needs. Nodes are therefore already in
//! topological order and one reverse sweep propagates gradients. Shapes are
//! rank-1 (vectors, scalars as `[1]`) or rank-2 (row-major matrices) — all
//! the model equations need.
//!
//! Determinism: every op uses fixed loop orders, ties in `max_pool` route
//! the gradient to the first maximal index, and `relu` uses subgradient 0
//! at the kink.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    /// (n,d) + (d,) broadcast over rows.
    AddBias,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax {
        axis: usize,
    },
    LogSumExp,
    MaxPool {
        axis: usize,
        argmax: Vec<usize>,
    },
    AvgPool {
        axis: usize,
    },
    Clamp {
        lo: f64,
        hi: f64,
    },
    CosineSim,
    GatherRows {
        indices: Vec<usize>,
    },
    Reshape,
    SumAll,
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    parents: Vec<TensorId>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by tape id after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given node; `None` if unreachable.
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [n, m] => (*n, *m),
        _ => unreachable!("tape tensors are rank 1 or 2"),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    /// Scalar convenience accessor; the node must have a single element.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, parents: Vec<TensorId>, op: Op) -> TensorId {
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite output from {op:?}"
        );
        self.nodes.push(Node {
            shape,
            values,
            parents,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        let (shape, values) = t.into_parts();
        self.push(shape, values, vec![], Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: &[usize], values: &[f64]) -> TensorId {
        self.push(shape.to_vec(), values.to_vec(), vec![], Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![1], vec![v], vec![], Op::Leaf)
    }

    fn binary_same_shape(&mut self, op_name: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b)?;
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), values, vec![a, b], Op::Add))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b)?;
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), values, vec![a, b], Op::Sub))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b)?;
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), values, vec![a, b], Op::Mul))
    }

    /// Matrix plus row-broadcast bias: (n,d) + (d,).
    pub fn add_bias(&mut self, m: TensorId, bias: TensorId) -> Result<TensorId> {
        let (n, d) = match *self.shape(m) {
            [n, d] => (n, d),
            _ => {
                return Err(Error::Shape {
                    op: "add_bias",
                    lhs: self.shape(m).to_vec(),
                    rhs: self.shape(bias).to_vec(),
                })
            }
        };
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(m).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mv = self.values(m);
        let bv = self.values(bias);
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                values.push(mv[i * d + j] + bv[j]);
            }
        }
        Ok(self.push(vec![n, d], values, vec![m, bias], Op::AddBias))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let values: Vec<f64> = self.values(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), values, vec![a], Op::Scale(c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let values: Vec<f64> = self.values(a).iter().map(|x| x + c).collect();
        self.push(self.shape(a).to_vec(), values, vec![a], Op::AddScalar)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, k) = match *self.shape(a) {
            [n, k] => (n, k),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: self.shape(a).to_vec(),
                    rhs: self.shape(b).to_vec(),
                })
            }
        };
        let (k2, m) = match *self.shape(b) {
            [k2, m] => (k2, m),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: self.shape(a).to_vec(),
                    rhs: self.shape(b).to_vec(),
                })
            }
        };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let values = matmul_raw(self.values(a), self.values(b), n, k, m);
        Ok(self.push(vec![n, m], values, vec![a, b], Op::MatMul))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (n, m) = match *self.shape(a) {
            [n, m] => (n, m),
            _ => {
                return Err(Error::Shape {
                    op: "transpose",
                    lhs: self.shape(a).to_vec(),
                    rhs: vec![],
                })
            }
        };
        let av = self.values(a);
        let mut values = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                values[j * n + i] = av[i * m + j];
            }
        }
        Ok(self.push(vec![m, n], values, vec![a], Op::Transpose))
    }

    /// Concatenate along `axis`. All inputs must share the other dimension.
    pub fn concat(&mut self, axis: usize, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let rank = self.shape(parts[0]).len();
        if axis >= rank {
            return Err(Error::Contract(format!("concat axis {axis} for rank {rank}")));
        }
        for &p in parts {
            if self.shape(p).len() != rank {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if rank == 1 {
            let mut values = Vec::new();
            for &p in parts {
                values.extend_from_slice(self.values(p));
            }
            let total = values.len();
            return Ok(self.push(vec![total], values, parts.to_vec(), Op::Concat { axis: 0 }));
        }
        // rank 2
        let other = 1 - axis;
        let fixed = self.shape(parts[0])[other];
        for &p in parts {
            if self.shape(p)[other] != fixed {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let (n, m) = if axis == 0 { (total, fixed) } else { (fixed, total) };
        let mut values = vec![0.0; n * m];
        if axis == 0 {
            let mut row = 0;
            for &p in parts {
                let pn = self.shape(p)[0];
                values[row * m..(row + pn) * m].copy_from_slice(self.values(p));
                row += pn;
            }
        } else {
            let mut col = 0;
            for &p in parts {
                let pm = self.shape(p)[1];
                let pv = self.values(p);
                for i in 0..n {
                    values[i * m + col..i * m + col + pm].copy_from_slice(&pv[i * pm..(i + 1) * pm]);
                }
                col += pm;
            }
        }
        Ok(self.push(vec![n, m], values, parts.to_vec(), Op::Concat { axis }))
    }

    /// Half-open slice along `axis`.
    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, end: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::Contract(format!(
                "slice [{start},{end}) on axis {axis} of shape {shape:?}"
            )));
        }
        let av = self.values(a);
        let (values, out_shape) = match shape.as_slice() {
            [_] => (av[start..end].to_vec(), vec![end - start]),
            [n, m] => {
                if axis == 0 {
                    (av[start * m..end * m].to_vec(), vec![end - start, *m])
                } else {
                    let mut v = Vec::with_capacity(n * (end - start));
                    for i in 0..*n {
                        v.extend_from_slice(&av[i * m + start..i * m + end]);
                    }
                    (v, vec![*n, end - start])
                }
            }
            _ => unreachable!(),
        };
        Ok(self.push(out_shape, values, vec![a], Op::Slice { axis, start }))
    }

    fn unary(&mut self, a: TensorId, op: Op, f: impl Fn(f64) -> f64) -> TensorId {
        let values: Vec<f64> = self.values(a).iter().map(|&x| f(x)).collect();
        self.push(self.shape(a).to_vec(), values, vec![a], op)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        if self.values(a).iter().any(|&x| x <= 0.0) {
            return Err(Error::Contract("log of non-positive value".into()));
        }
        Ok(self.unary(a, Op::Log, f64::ln))
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        self.unary(a, Op::Clamp { lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Softmax along `axis` (max-subtracted). For rank-1 inputs use axis 0.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        let (n, m) = rows_cols(&shape);
        let av = self.values(a);
        let mut values = vec![0.0; av.len()];
        // lanes run along `axis`; iterate the complementary dimension
        let (lanes, lane_len, stride, lane_step) = if shape.len() == 1 || axis == 1 {
            (n, m, 1usize, m)
        } else {
            (m, n, m, 1usize)
        };
        for lane in 0..lanes {
            let base = lane * lane_step;
            let mut maxv = f64::NEG_INFINITY;
            for i in 0..lane_len {
                maxv = maxv.max(av[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..lane_len {
                let e = (av[base + i * stride] - maxv).exp();
                values[base + i * stride] = e;
                sum += e;
            }
            for i in 0..lane_len {
                values[base + i * stride] /= sum;
            }
        }
        Ok(self.push(shape, values, vec![a], Op::Softmax { axis }))
    }

    /// log(Σ exp(x)) over a rank-1 input, max-subtracted.
    pub fn log_sum_exp(&mut self, a: TensorId) -> Result<TensorId> {
        if self.shape(a).len() != 1 {
            return Err(Error::Shape {
                op: "log_sum_exp",
                lhs: self.shape(a).to_vec(),
                rhs: vec![],
            });
        }
        let av = self.values(a);
        let maxv = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = av.iter().map(|x| (x - maxv).exp()).sum();
        let v = maxv + sum.ln();
        Ok(self.push(vec![1], vec![v], vec![a], Op::LogSumExp))
    }

    fn pool(&mut self, a: TensorId, axis: usize, max: bool) -> Result<TensorId> {
        let (n, m) = match *self.shape(a) {
            [n, m] => (n, m),
            _ => {
                return Err(Error::Shape {
                    op: if max { "max_pool" } else { "avg_pool" },
                    lhs: self.shape(a).to_vec(),
                    rhs: vec![],
                })
            }
        };
        if axis > 1 {
            return Err(Error::Contract(format!("pool axis {axis}")));
        }
        let av = self.values(a);
        let (lanes, lane_len, stride, lane_step) = if axis == 0 {
            (m, n, m, 1usize)
        } else {
            (n, m, 1usize, m)
        };
        let mut values = Vec::with_capacity(lanes);
        let mut argmax = Vec::new();
        for lane in 0..lanes {
            let base = lane * lane_step;
            if max {
                let mut best = av[base];
                let mut best_i = 0usize;
                for i in 1..lane_len {
                    let x = av[base + i * stride];
                    if x > best {
                        best = x;
                        best_i = i;
                    }
                }
                values.push(best);
                argmax.push(best_i);
            } else {
                let mut s = 0.0;
                for i in 0..lane_len {
                    s += av[base + i * stride];
                }
                values.push(s / lane_len as f64);
            }
        }
        let op = if max {
            Op::MaxPool { axis, argmax }
        } else {
            Op::AvgPool { axis }
        };
        Ok(self.push(vec![lanes], values, vec![a], op))
    }

    /// Reduce over `axis` keeping the first maximal element on ties.
    pub fn max_pool(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.pool(a, axis, true)
    }

    pub fn avg_pool(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        self.pool(a, axis, false)
    }

    /// Cosine similarity of two rank-1 tensors; denominators are floored at
    /// 1e-12 so the zero vector yields similarity 0 instead of NaN.
    pub fn cosine_similarity(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a).len() != 1 || self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "cosine_similarity",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (c, _, _) = cosine_raw(self.values(a), self.values(b));
        Ok(self.push(vec![1], vec![c], vec![a, b], Op::CosineSim))
    }

    /// Rows of `table` selected by index; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (v, d) = match *self.shape(table) {
            [v, d] => (v, d),
            _ => {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: self.shape(table).to_vec(),
                    rhs: vec![indices.len()],
                })
            }
        };
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of range {v}"
            )));
        }
        let tv = self.values(table);
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![indices.len(), d],
            values,
            vec![table],
            Op::GatherRows {
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        let expect: usize = shape.iter().product();
        if expect != self.values(a).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let values = self.values(a).to_vec();
        Ok(self.push(shape.to_vec(), values, vec![a], Op::Reshape))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.values(a).iter().sum();
        self.push(vec![1], vec![s], vec![a], Op::SumAll)
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.values(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a scalar loss. Every node reachable from the loss
    /// receives a gradient; leaves that do not contribute stay `None`.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on empty tape".into()));
        }
        if self.values(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.accumulate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let ensure = |grads: &mut [Option<Vec<f64>>], p: TensorId, len: usize| {
            if grads[p.0].is_none() {
                grads[p.0] = Some(vec![0.0; len]);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                for (slot, &p) in node.parents.iter().enumerate() {
                    let _ = slot;
                    ensure(grads, p, g.len());
                    let pg = grads[p.0].as_mut().unwrap();
                    for i in 0..g.len() {
                        pg[i] += g[i];
                    }
                }
            }
            Op::Sub => {
                let (a, b) = (node.parents[0], node.parents[1]);
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i];
                }
                ensure(grads, b, g.len());
                let pb = grads[b.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pb[i] -= g[i];
                }
            }
            Op::Mul => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let av = self.values(a).to_vec();
                let bv = self.values(b).to_vec();
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    if g[i] != 0.0 {
                        pa[i] += g[i] * bv[i];
                    }
                }
                ensure(grads, b, g.len());
                let pb = grads[b.0].as_mut().unwrap();
                for i in 0..g.len() {
                    if g[i] != 0.0 {
                        pb[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddBias => {
                let (m, bias) = (node.parents[0], node.parents[1]);
                let [n, d] = *self.shape(m) else { unreachable!() };
                ensure(grads, m, n * d);
                let pm = grads[m.0].as_mut().unwrap();
                for i in 0..n * d {
                    pm[i] += g[i];
                }
                ensure(grads, bias, d);
                let pb = grads[bias.0].as_mut().unwrap();
                for i in 0..n {
                    for j in 0..d {
                        pb[j] += g[i * d + j];
                    }
                }
            }
            Op::Scale(c) => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    if g[i] != 0.0 {
                        pa[i] += g[i] * c;
                    }
                }
            }
            Op::AddScalar => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i];
                }
            }
            Op::MatMul => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let [n, k] = *self.shape(a) else { unreachable!() };
                let [_, m] = *self.shape(b) else { unreachable!() };
                let av = self.values(a);
                let bv = self.values(b);
                // dA = g · Bᵀ
                ensure(grads, a, n * k);
                {
                    let pa = grads[a.0].as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..m {
                            let gv = g[i * m + j];
                            if gv != 0.0 {
                                for p in 0..k {
                                    pa[i * k + p] += gv * bv[p * m + j];
                                }
                            }
                        }
                    }
                }
                // dB = Aᵀ · g
                ensure(grads, b, k * m);
                {
                    let pb = grads[b.0].as_mut().unwrap();
                    for i in 0..n {
                        for p in 0..k {
                            let avp = av[i * k + p];
                            if avp != 0.0 {
                                for j in 0..m {
                                    pb[p * m + j] += avp * g[i * m + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Transpose => {
                let a = node.parents[0];
                let [n, m] = *self.shape(a) else { unreachable!() };
                ensure(grads, a, n * m);
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..n {
                    for j in 0..m {
                        pa[i * m + j] += g[j * n + i];
                    }
                }
            }
            Op::Concat { axis } => {
                let rank = node.shape.len();
                if rank == 1 {
                    let mut off = 0;
                    for &p in &node.parents {
                        let len = self.values(p).len();
                        ensure(grads, p, len);
                        let pg = grads[p.0].as_mut().unwrap();
                        for i in 0..len {
                            pg[i] += g[off + i];
                        }
                        off += len;
                    }
                } else if *axis == 0 {
                    let m = node.shape[1];
                    let mut row = 0;
                    for &p in &node.parents {
                        let pn = self.shape(p)[0];
                        ensure(grads, p, pn * m);
                        let pg = grads[p.0].as_mut().unwrap();
                        for i in 0..pn * m {
                            pg[i] += g[row * m + i];
                        }
                        row += pn;
                    }
                } else {
                    let n = node.shape[0];
                    let m = node.shape[1];
                    let mut col = 0;
                    for &p in &node.parents {
                        let pm = self.shape(p)[1];
                        ensure(grads, p, n * pm);
                        let pg = grads[p.0].as_mut().unwrap();
                        for i in 0..n {
                            for j in 0..pm {
                                pg[i * pm + j] += g[i * m + col + j];
                            }
                        }
                        col += pm;
                    }
                }
            }
            Op::Slice { axis, start } => {
                let a = node.parents[0];
                let pshape = self.shape(a).to_vec();
                ensure(grads, a, pshape.iter().product());
                let pa = grads[a.0].as_mut().unwrap();
                match pshape.as_slice() {
                    [_] => {
                        for (i, &gv) in g.iter().enumerate() {
                            pa[start + i] += gv;
                        }
                    }
                    [_, m] => {
                        if *axis == 0 {
                            for (i, &gv) in g.iter().enumerate() {
                                pa[start * m + i] += gv;
                            }
                        } else {
                            let out_m = node.shape[1];
                            let n = node.shape[0];
                            for i in 0..n {
                                for j in 0..out_m {
                                    pa[i * m + start + j] += g[i * out_m + j];
                                }
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Relu => {
                let a = node.parents[0];
                let av = self.values(a);
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        pa[i] += g[i];
                    }
                }
            }
            Op::Tanh => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let y = &node.values;
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Sigmoid => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let y = &node.values;
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Exp => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let y = &node.values;
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i] * y[i];
                }
            }
            Op::Log => {
                let a = node.parents[0];
                let av = self.values(a);
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i] / av[i];
                }
            }
            Op::Clamp { lo, hi } => {
                let a = node.parents[0];
                let av = self.values(a);
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    if av[i] > *lo && av[i] < *hi {
                        pa[i] += g[i];
                    }
                }
            }
            Op::Softmax { axis } => {
                let a = node.parents[0];
                let shape = &node.shape;
                let (n, m) = rows_cols(shape);
                ensure(grads, a, g.len());
                let y = &node.values;
                let pa = grads[a.0].as_mut().unwrap();
                let (lanes, lane_len, stride, lane_step) = if shape.len() == 1 || *axis == 1 {
                    (n, m, 1usize, m)
                } else {
                    (m, n, m, 1usize)
                };
                for lane in 0..lanes {
                    let base = lane * lane_step;
                    let mut dot = 0.0;
                    for i in 0..lane_len {
                        dot += g[base + i * stride] * y[base + i * stride];
                    }
                    for i in 0..lane_len {
                        let idx = base + i * stride;
                        pa[idx] += (g[idx] - dot) * y[idx];
                    }
                }
            }
            Op::LogSumExp => {
                let a = node.parents[0];
                let av = self.values(a);
                ensure(grads, a, av.len());
                let maxv = av.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = av.iter().map(|x| (x - maxv).exp()).sum();
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..av.len() {
                    pa[i] += g[0] * (av[i] - maxv).exp() / sum;
                }
            }
            Op::MaxPool { axis, argmax } => {
                let a = node.parents[0];
                let [n, m] = *self.shape(a) else { unreachable!() };
                ensure(grads, a, n * m);
                let pa = grads[a.0].as_mut().unwrap();
                let (stride, lane_step) = if *axis == 0 { (m, 1usize) } else { (1usize, m) };
                for (lane, &am) in argmax.iter().enumerate() {
                    pa[lane * lane_step + am * stride] += g[lane];
                }
            }
            Op::AvgPool { axis } => {
                let a = node.parents[0];
                let [n, m] = *self.shape(a) else { unreachable!() };
                ensure(grads, a, n * m);
                let pa = grads[a.0].as_mut().unwrap();
                let (lanes, lane_len, stride, lane_step) = if *axis == 0 {
                    (m, n, m, 1usize)
                } else {
                    (n, m, 1usize, m)
                };
                for lane in 0..lanes {
                    let base = lane * lane_step;
                    let gv = g[lane] / lane_len as f64;
                    for i in 0..lane_len {
                        pa[base + i * stride] += gv;
                    }
                }
            }
            Op::CosineSim => {
                let (a, b) = (node.parents[0], node.parents[1]);
                let av = self.values(a).to_vec();
                let bv = self.values(b).to_vec();
                let (c, na, nb) = cosine_raw(&av, &bv);
                let denom = (na * nb).max(1e-12);
                ensure(grads, a, av.len());
                {
                    let pa = grads[a.0].as_mut().unwrap();
                    for i in 0..av.len() {
                        pa[i] += g[0] * (bv[i] / denom - c * av[i] / (na * na).max(1e-12));
                    }
                }
                ensure(grads, b, bv.len());
                {
                    let pb = grads[b.0].as_mut().unwrap();
                    for i in 0..bv.len() {
                        pb[i] += g[0] * (av[i] / denom - c * bv[i] / (nb * nb).max(1e-12));
                    }
                }
            }
            Op::GatherRows { indices } => {
                let table = node.parents[0];
                let [_, d] = *self.shape(table) else { unreachable!() };
                let total = self.values(table).len();
                ensure(grads, table, total);
                let pt = grads[table.0].as_mut().unwrap();
                for (row, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        pt[idx * d + j] += g[row * d + j];
                    }
                }
            }
            Op::Reshape => {
                let a = node.parents[0];
                ensure(grads, a, g.len());
                let pa = grads[a.0].as_mut().unwrap();
                for i in 0..g.len() {
                    pa[i] += g[i];
                }
            }
            Op::SumAll => {
                let a = node.parents[0];
                let len = self.values(a).len();
                ensure(grads, a, len);
                let pa = grads[a.0].as_mut().unwrap();
                for slot in pa.iter_mut() {
                    *slot += g[0];
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let brow = &b[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    out
}

fn cosine_raw(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    let na = na.sqrt();
    let nb = nb.sqrt();
    (dot / (na * nb).max(1e-12), na, nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf1(t: &mut Tape, v: &[f64]) -> TensorId {
        t.leaf_from(&[v.len()], v)
    }

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[0.0, 0.0]);
        let s = t.softmax(x, 0).unwrap();
        assert_eq!(t.values(s), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf_from(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let s = t.softmax(x, 1).unwrap();
        for row in t.values(s).chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let mut t = Tape::new();
        let x = t.leaf_from(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let s = t.softmax(x, 0).unwrap();
        let v = t.values(s);
        for j in 0..3 {
            let sum = v[j] + v[3 + j];
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_of_self_is_one() {
        let mut t = Tape::new();
        let v = leaf1(&mut t, &[3.0, -4.0, 1.0]);
        let c = t.cosine_similarity(v, v).unwrap();
        assert!((t.scalar_value(c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let mut t = Tape::new();
        let a = leaf1(&mut t, &[0.0, 0.0]);
        let b = leaf1(&mut t, &[1.0, 2.0]);
        let c = t.cosine_similarity(a, b).unwrap();
        assert_eq!(t.scalar_value(c), 0.0);
    }

    #[test]
    fn max_pool_over_rows() {
        let mut t = Tape::new();
        let x = t.leaf_from(&[2, 2], &[1.0, 4.0, 3.0, 2.0]);
        let m = t.max_pool(x, 0).unwrap();
        assert_eq!(t.values(m), &[3.0, 4.0]);
        let a = t.avg_pool(x, 0).unwrap();
        assert_eq!(t.values(a), &[2.0, 3.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[1.0, 2.0]);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[0.0]);
        let y = t.tanh(x);
        let grads = t.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[0.0, -1.0, 2.0]);
        let y = t.relu(x);
        let loss = t.sum_all(y);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_known_product() {
        let mut t = Tape::new();
        let a = t.leaf_from(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t.leaf_from(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.values(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_shape_error() {
        let mut t = Tape::new();
        let a = t.leaf_from(&[2, 3], &[0.0; 6]);
        let b = t.leaf_from(&[2, 2], &[0.0; 4]);
        match t.matmul(a, b) {
            Err(crate::error::Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_is_linear_over_sums() {
        // grad(f+g) = grad(f) + grad(g)
        let mut rng = crate::rng::Rng::new(11);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();

            let build = |t: &mut Tape, x: TensorId, which: u8| -> TensorId {
                match which {
                    0 => {
                        let y = t.tanh(x);
                        t.sum_all(y)
                    }
                    1 => {
                        let y = t.mul(x, x).unwrap();
                        t.sum_all(y)
                    }
                    _ => {
                        let f = {
                            let y = t.tanh(x);
                            t.sum_all(y)
                        };
                        let g = {
                            let y = t.mul(x, x).unwrap();
                            t.sum_all(y)
                        };
                        t.add(f, g).unwrap()
                    }
                }
            };

            let grad_of = |which: u8| -> Vec<f64> {
                let mut t = Tape::new();
                let x = t.leaf_from(&[4], &xs);
                let loss = build(&mut t, x, which);
                t.backward(loss).unwrap().get(x).unwrap().to_vec()
            };

            let gf = grad_of(0);
            let gg = grad_of(1);
            let gsum = grad_of(2);
            for i in 0..4 {
                assert!((gsum[i] - (gf[i] + gg[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[1.0, 2.0, 3.0]);
        let l = t.log_sum_exp(x).unwrap();
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((t.scalar_value(l) - direct).abs() < 1e-12);
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut t = Tape::new();
        let a = t.leaf_from(&[1, 2], &[1.0, 2.0]);
        let b = t.leaf_from(&[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = t.concat(0, &[a, b]).unwrap();
        assert_eq!(t.shape(c), &[3, 2]);
        let back = t.slice(c, 0, 1, 3).unwrap();
        assert_eq!(t.values(back), &[3.0, 4.0, 5.0, 6.0]);
        let col = t.slice(c, 1, 1, 2).unwrap();
        assert_eq!(t.values(col), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let mut t = Tape::new();
        let x = leaf1(&mut t, &[1.0, 2.0]);
        assert!(matches!(
            t.backward(x),
            Err(crate::error::Error::Contract(_))
        ));
    }
}
