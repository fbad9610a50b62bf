//! Reverse-mode differentiation over a linear op tape.
//!
//! Forward ops append nodes holding their computed value. `backward` walks
//! the tape in reverse and returns one gradient buffer per node that needs
//! one. Parameters are bound once per tape by key, so every use of a weight
//! inside a forward pass shares a single leaf and its gradient.

use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Identity of a trainable tensor: which parameter group, which slot in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u16,
    pub index: u32,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Shift(Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    NegPick {
        x: Var,
        picks: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = C * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// C[m×n] = A[m×k] · B[k×n]
fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients are tracked only if the tensor asks for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Binds a trainable tensor. Repeated binds with the same key return the
    /// same node.
    pub fn param(&mut self, key: ParamKey, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(t.clone(), Op::Param, true);
        self.params.insert(key, v);
        v
    }

    /// All bound parameters, ordered by key.
    pub fn params(&self) -> Vec<(ParamKey, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(k, v)| (*k, *v)).collect();
        out.sort();
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let c = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, c)?, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose needs a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.ng(a);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), needs))
    }

    /// Adds vector `b` (length n) to every row of `a` (m×n).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.shape(b).len() != 1 || self.shape(b)[0] != n {
            return Err(shape_err("add_row", self.shape(a), self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            add_into(row, &bias);
        }
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, b), needs))
    }

    /// Adds a constant tensor; no gradient flows into the constant.
    pub fn shift(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(a).numel() {
            return Err(Error::Shape(format!(
                "shift: constant has {} entries, tensor {:?}",
                c.len(),
                self.shape(a)
            )));
        }
        let data: Vec<f64> = self.value(a).data().iter().zip(c).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Shift(a), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a);
        self.push(Tensor::new(shape, data).unwrap(), Op::Scale(a, s), needs)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), needs))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| gelu_parts(x).0).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a);
        self.push(Tensor::new(shape, data).unwrap(), Op::Gelu(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.ng(a);
        self.push(Tensor::new(shape, data).unwrap(), Op::Relu(a), needs)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(shape_err("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let rows = self.value(x).rows();
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * n];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Row-wise softmax, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        let needs = self.ng(x);
        self.push(out, Op::Softmax(x), needs)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = t.shape().to_vec();
        let needs = self.ng(x);
        self.push(Tensor::new(shape, out).unwrap(), Op::LogSoftmax(x), needs)
    }

    /// Gathers `ids` rows of `table` into a `len(ids)×d` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "embedding table must be a matrix, got {:?}",
                t.shape()
            )));
        }
        if ids.is_empty() {
            return Err(Error::Shape("embedding lookup with no ids".into()));
        }
        let (v, d) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("token id {id} out of range for {v} rows")));
            }
            out.extend_from_slice(t.row(id));
        }
        let needs = self.ng(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let n = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(shape_err("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, n, data)?,
            Op::ConcatRows(parts.to_vec()),
            needs,
        ))
    }

    /// Joins along the last axis. Vector inputs give a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let rank = self.shape(*first).len();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows || t.shape().len() != rank {
                return Err(shape_err("concat_cols", self.shape(*first), t.shape()));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if rank == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        let needs = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || len == 0 || start + len > t.rows() {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let n = t.cols();
        let data = t.data()[start * n..(start + len) * n].to_vec();
        let needs = self.ng(x);
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows { x, start }, needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} out of {:?}",
                start + len,
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let shape = if t.shape().len() == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        let needs = self.ng(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols { x, start }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = self.value(x).data().to_vec();
        let t = Tensor::new(shape.to_vec(), data)?;
        let needs = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Sum of all entries as a length-1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let needs = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Summed (not averaged) negative log-likelihood of `targets` under the
    /// row-wise softmax of `logits` (T×V).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "cross_entropy: {} target ids for logits {:?}",
                targets.len(),
                t.shape()
            )));
        }
        let v = t.cols();
        if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
            return Err(Error::Index(format!("target id {bad} out of range for {v} classes")));
        }
        let probs = softmax_rows(t).into_data();
        let mut loss = 0.0;
        for (r, &id) in targets.iter().enumerate() {
            let row = t.row(r);
            loss += log_sum_exp(row) - row[id];
        }
        let needs = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// −Σ x[i] over flat indices `picks` (duplicates count repeatedly).
    pub fn neg_pick(&mut self, x: Var, picks: &[usize]) -> Result<Var> {
        let data = self.value(x).data();
        if let Some(&bad) = picks.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Index(format!(
                "pick index {bad} out of range for {} entries",
                data.len()
            )));
        }
        let s: f64 = picks.iter().map(|&i| data[i]).sum();
        let needs = self.ng(x);
        Ok(self.push(
            Tensor::scalar(-s),
            Op::NegPick {
                x,
                picks: picks.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse pass from a single-entry output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(out)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let (ad, bd) = (av.data(), bv.data());
                self.acc(grads, *a, |da| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.acc(grads, *b, |db| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                self.acc(grads, *a, |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |da| add_into(da, g));
                self.acc(grads, *b, |db| add_into(db, g));
            }
            Op::AddRow(a, b) => {
                let n = self.value(*b).numel();
                self.acc(grads, *a, |da| add_into(da, g));
                self.acc(grads, *b, |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Shift(a) | Op::Reshape(a) => self.acc(grads, *a, |da| add_into(da, g)),
            Op::Scale(a, s) => self.acc(grads, *a, |da| {
                da.iter_mut().zip(g).for_each(|(d, gv)| *d += s * gv)
            }),
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bd[i];
                    }
                });
                self.acc(grads, *b, |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * ad[i];
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * gelu_parts(x[i]).1;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |da| {
                    for i in 0..da.len() {
                        if x[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |dg| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                self.acc(grads, *bias, |db| {
                    for grow in g.chunks(n) {
                        add_into(db, grow);
                    }
                });
                self.acc(grads, *x, |dx| {
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let dh: Vec<f64> = (0..n).map(|j| grow[j] * gv[j]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dx[r * n + j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                self.acc(grads, *a, |da| {
                    for ((drow, yrow), grow) in da.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                self.acc(grads, *a, |da| {
                    for ((drow, yrow), grow) in da.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let gs: f64 = grow.iter().sum();
                        for j in 0..n {
                            drow[j] += grow[j] - yrow[j].exp() * gs;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.acc(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.acc(grads, p, |dp| add_into(dp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |dp| {
                        for r in 0..rows {
                            add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + col..r * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.value(*x).cols();
                self.acc(grads, *x, |dx| add_into(&mut dx[start * n..start * n + g.len()], g));
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                self.acc(grads, *x, |dx| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut dx[r * n + start..r * n + start + w], grow);
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = self.value(*logits).cols();
                self.acc(grads, *logits, |dl| {
                    for (r, &id) in targets.iter().enumerate() {
                        for j in 0..v {
                            dl[r * v + j] += g[0] * probs[r * v + j];
                        }
                        dl[r * v + id] -= g[0];
                    }
                });
            }
            Op::NegPick { x, picks } => self.acc(grads, *x, |dx| {
                for &i in picks {
                    dx[i] -= g[0];
                }
            }),
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Value-level row-wise softmax shared by the tape op and inference code.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let n = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

/// Softmax of a plain slice.
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    Ok(softmax_rows(&Tensor::vector(xs.to_vec())?).into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut tape = Tape::new();
        let a = tape.leaf(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(m(2, 1, &[0.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    fn identity_matmul_is_exact() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let i3 = tape.leaf(Tensor::identity(3));
        let a = tape.leaf(m(3, 3, &data));
        let c = tape.matmul(i3, a).unwrap();
        assert_eq!(tape.value(c).data(), &data[..]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.matches("[2, 3]").count() == 2, "{err}");
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let u = softmax(&[0.0; 7]).unwrap();
        assert!(u.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-15 && big[1] < 1e-300);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_perfect() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::zeros(&[3, 10]));
        let l = tape.cross_entropy(u, &[1, 4, 9]).unwrap();
        assert!((tape.value(l).data()[0] - 3.0 * 10f64.ln()).abs() < 1e-12);

        let mut logits = vec![0.0; 20];
        logits[3] = 800.0;
        logits[10 + 7] = 800.0;
        let p = tape.leaf(m(2, 10, &logits));
        let l = tape.cross_entropy(p, &[3, 7]).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-12);

        let err = tape.cross_entropy(p, &[3, 10]).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
    }

    #[test]
    fn param_binding_is_shared() {
        let mut tape = Tape::new();
        let w = Tensor::filled(&[2, 2], 1.0);
        let key = ParamKey { group: 0, index: 3 };
        let a = tape.param(key, &w);
        let b = tape.param(key, &w);
        assert_eq!(a, b);
        let s = tape.matmul(a, b).unwrap();
        let s = tape.sum(s);
        let g = tape.backward(s).unwrap();
        // d/dW sum(W W) = 1 Wᵀ + Wᵀ 1 → 4 everywhere for W = ones
        assert_eq!(g.wrt(a).unwrap(), &[4.0; 4]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::filled(&[3], 2.0));
        let x = tape.leaf(Tensor::filled(&[3], 1.0).with_requires_grad());
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap(), &[2.0; 3]);
    }
}
