//! Reverse-mode differentiation tape.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order; backward walks it once from the loss down.

use log::warn;

use crate::autograd::tensor::{dims2, matmul_raw, numel, transpose_raw, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
    FrobeniusSq(Var),
}

struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Vec<S>>, g: &[S]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x),
        None => *slot = Some(g.to_vec()),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, requires_grad: bool, op: Op<S>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; it tracks gradients iff the tensor does.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Records a tensor as a leaf with an explicit gradient flag.
    pub fn bind(&mut self, t: &Tensor<S>, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        if shape.is_empty() || numel(shape) != data.len() {
            return Err(Error::invalid(
                "constant",
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> S {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "item() on non-scalar node");
        val[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is valid")
    }

    /// Accumulated gradient of a node, if any has reached it.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Inputs of every ReLU node, concatenated in tape order.
    pub fn relu_preactivations(&self) -> Vec<S> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.nodes[x.0].value.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    // ---- operations ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Vec<S> {
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::Mul(a, b)))
    }

    /// Adds a length-`d` row to every row of an `[n×d]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let d = *self.shape(a).last().expect("shape");
        if numel(self.shape(row)) != d {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).to_vec();
        let out: Vec<S> = self
            .value(a)
            .chunks(d)
            .flat_map(|chunk| chunk.iter().zip(&r).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(self.shape(a).to_vec(), out, rg, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, rg, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), out, rg, Op::Relu(a))
    }

    /// Row-wise softmax over the last dimension, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("shape");
        let out = softmax_rows(self.value(x), d, None);
        let rg = self.rg(x);
        Ok(self.push(self.shape(x).to_vec(), out, rg, Op::Softmax(x)))
    }

    /// Softmax of an `[n×n]` score matrix where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, m) = dims2("causal_softmax", self.shape(x))?;
        if n != m {
            return Err(Error::invalid("causal_softmax", "score matrix must be square"));
        }
        let out = softmax_rows(self.value(x), m, Some(()));
        let rg = self.rg(x);
        Ok(self.push(vec![n, m], out, rg, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let d = *self.shape(x).last().expect("shape");
        if numel(self.shape(gain)) != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        if numel(self.shape(bias)) != d {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(bias)));
        }
        let n_rows = self.value(x).len() / d;
        let dn = S::lit(d as f64);
        let mut xhat = Vec::with_capacity(n_rows * d);
        let mut inv_std = Vec::with_capacity(n_rows);
        let mut out = Vec::with_capacity(n_rows * d);
        {
            let xs = self.value(x);
            let g = self.value(gain);
            let b = self.value(bias);
            for row in xs.chunks(d) {
                let mean = row.iter().copied().sum::<S>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
                let inv = S::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * inv;
                    xhat.push(h);
                    out.push(h * g[j] + b[j]);
                }
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Selects rows of a `[V×d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2("gather_rows", self.shape(table))?;
        if ids.is_empty() {
            return Err(Error::invalid("gather_rows", "no rows requested"));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { token: id, vocab: v });
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (n, d) = dims2("slice_cols", self.shape(x))?;
        if width == 0 || start + width > d {
            return Err(Error::invalid(
                "slice_cols",
                format!("columns {start}..{} out of {d}", start + width),
            ));
        }
        let xs = self.value(x);
        let out: Vec<S> = (0..n)
            .flat_map(|i| xs[i * d + start..i * d + start + width].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(vec![n, width], out, rg, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "no parts"))?;
        let (n, _) = dims2("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (np, w) = dims2("concat_cols", self.shape(p))?;
            if np != n {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![n, total], out, rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = dims2("transpose", self.shape(x))?;
        let out = transpose_raw(self.value(x), m, n);
        let rg = self.rg(x);
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty() || numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), out, rg, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::Sum(x))
    }

    /// `(1/N) Σ_i ‖a_i − b_i‖²` where `i` runs over the `N` rows (a 1-D input is one row).
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let shape = self.shape(a);
        let rows = if shape.len() == 1 { 1 } else { shape[0] };
        let ss: S = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = ss / S::lit(rows as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![out], rg, Op::Mse(a, b)))
    }

    /// Mean negative log-likelihood of the targets over unmasked rows.
    ///
    /// `None` targets are masked out. With every row masked the loss is 0.
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, v) = dims2("cross_entropy", self.shape(logits))?;
        if targets.len() != n {
            return Err(Error::invalid(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        for &t in targets.iter().flatten() {
            if t >= v {
                return Err(Error::TargetOutOfRange { target: t, classes: v });
            }
        }
        let probs = softmax_rows(self.value(logits), v, None);
        let count = targets.iter().filter(|t| t.is_some()).count();
        let loss = if count == 0 {
            warn!("cross_entropy: every position is masked; loss defined as 0");
            S::zero()
        } else {
            let xs = self.value(logits);
            let mut total = S::zero();
            for (i, t) in targets.iter().enumerate() {
                if let Some(t) = *t {
                    let row = &xs[i * v..(i + 1) * v];
                    total = total - log_softmax_at(row, t);
                }
            }
            total / S::lit(count as f64)
        };
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
        self.cross_entropy_masked(logits, &t)
    }

    pub fn frobenius_sq(&mut self, m: Var) -> Var {
        let s = self.value(m).iter().map(|&x| x * x).sum();
        let rg = self.rg(m);
        self.push(vec![1], vec![s], rg, Op::FrobeniusSq(m))
    }

    // ---- backward ----

    /// Propagates d(loss)/d(node) to every gradient-tracking node reachable from `loss`.
    ///
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        let mut local: Vec<Option<Vec<S>>> = Vec::new();
        local.resize_with(loss.0 + 1, || None);
        if !self.rg(loss) {
            return Ok(());
        }
        local[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            self.propagate(i, &g, &mut local);
            add_into(&mut self.grads[i], &g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], local: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, grad: Vec<S>| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut local[v.0], &grad);
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = dims2("matmul", self.shape(a)).expect("checked");
                let n = node.shape[1];
                if self.rg(a) {
                    // dA = dOut · Bᵀ
                    let bt = transpose_raw(self.value(b), k, n);
                    send(a, matmul_raw(g, &bt, m, n, k));
                }
                if self.rg(b) {
                    // dB = Aᵀ · dOut
                    let at = transpose_raw(self.value(a), m, k);
                    send(b, matmul_raw(&at, g, k, m, n));
                }
            }
            &Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            &Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|&x| -x).collect());
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    send(a, g.iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect());
                }
                if self.rg(b) {
                    send(b, g.iter().zip(self.value(a)).map(|(&x, &y)| x * y).collect());
                }
            }
            &Op::AddRow(a, row) => {
                send(a, g.to_vec());
                if self.rg(row) {
                    let d = numel(self.shape(row));
                    let mut acc = vec![S::zero(); d];
                    for chunk in g.chunks(d) {
                        acc.iter_mut().zip(chunk).for_each(|(s, &x)| *s = *s + x);
                    }
                    send(row, acc);
                }
            }
            &Op::Scale(a, c) => send(a, g.iter().map(|&x| x * c).collect()),
            &Op::Relu(a) => {
                let grad = g
                    .iter()
                    .zip(self.value(a))
                    .map(|(&x, &p)| if p > S::zero() { x } else { S::zero() })
                    .collect();
                send(a, grad);
            }
            &Op::Softmax(x) => {
                let d = *node.shape.last().expect("shape");
                let y = &node.value;
                let mut grad = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(d).zip(g.chunks(d)) {
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    grad.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                send(x, grad);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *node.shape.last().expect("shape");
                let gv = self.value(*gain);
                if self.rg(*x) {
                    let dn = S::lit(d as f64);
                    let mut dx = Vec::with_capacity(g.len());
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<S> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let sum_dh: S = dh.iter().copied().sum();
                        let sum_dh_h: S = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum();
                        let inv = inv_std[r];
                        dx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(&a, &h)| inv / dn * (dn * a - sum_dh - h * sum_dh_h)),
                        );
                    }
                    send(*x, dx);
                }
                if self.rg(*gain) {
                    let mut dg = vec![S::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * hr[j];
                        }
                    }
                    send(*gain, dg);
                }
                if self.rg(*bias) {
                    let mut db = vec![S::zero(); d];
                    for gr in g.chunks(d) {
                        db.iter_mut().zip(gr).for_each(|(s, &x)| *s = *s + x);
                    }
                    send(*bias, db);
                }
            }
            Op::Gather { table, ids } => {
                let (v, d) = dims2("gather", self.shape(*table)).expect("checked");
                let mut dt = vec![S::zero(); v * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] = dt[id * d + j] + g[r * d + j];
                    }
                }
                send(*table, dt);
            }
            &Op::SliceCols { x, start } => {
                let (n, d) = dims2("slice", self.shape(x)).expect("checked");
                let w = node.shape[1];
                let mut dx = vec![S::zero(); n * d];
                for i in 0..n {
                    dx[i * d + start..i * d + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(x, dx);
            }
            Op::ConcatCols(parts) => {
                let n = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[self.shape(p).len() - 1];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        send(p, dp);
                    }
                    offset += w;
                }
            }
            &Op::Transpose(x) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                send(x, transpose_raw(g, m, n));
            }
            &Op::Reshape(x) => send(x, g.to_vec()),
            &Op::Sum(x) => send(x, vec![g[0]; numel(self.shape(x))]),
            &Op::Mse(a, b) => {
                let shape = self.shape(a);
                let rows = if shape.len() == 1 { 1 } else { shape[0] };
                let c = S::lit(2.0) * g[0] / S::lit(rows as f64);
                let diff: Vec<S> = self
                    .value(a)
                    .iter()
                    .zip(self.value(b))
                    .map(|(&x, &y)| (x - y) * c)
                    .collect();
                if self.rg(b) {
                    send(b, diff.iter().map(|&x| -x).collect());
                }
                send(a, diff);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let v = *self.shape(*logits).last().expect("shape");
                let c = g[0] / S::lit(*count as f64);
                let mut dl = vec![S::zero(); probs.len()];
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for j in 0..v {
                            dl[i * v + j] = probs[i * v + j] * c;
                        }
                        dl[i * v + t] = dl[i * v + t] - c;
                    }
                }
                send(*logits, dl);
            }
            &Op::FrobeniusSq(m) => {
                let two = S::lit(2.0) * g[0];
                send(m, self.value(m).iter().map(|&x| x * two).collect());
            }
        }
    }
}

fn softmax_rows<S: Scalar>(x: &[S], d: usize, causal: Option<()>) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for (r, (row, o)) in x.chunks(d).zip(out.chunks_mut(d)).enumerate() {
        let width = if causal.is_some() { r + 1 } else { d };
        let max = row[..width].iter().copied().fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for j in 0..width {
            let e = (row[j] - max).exp();
            o[j] = e;
            total = total + e;
        }
        for v in &mut o[..width] {
            *v = *v / total;
        }
    }
    out
}

fn log_softmax_at<S: Scalar>(row: &[S], t: usize) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
    row[t] - lse
}

/// Numerically stable softmax of a plain slice.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    if x.is_empty() {
        return Vec::new();
    }
    softmax_rows(x, x.len(), None)
}
