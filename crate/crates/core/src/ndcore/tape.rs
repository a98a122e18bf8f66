use std::collections::HashMap;

use super::tensor::{dim_err, matmul_raw, transpose_raw, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Tanh(usize),
    Silu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Gather(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    Transpose(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic record-and-replay tape for reverse-mode differentiation.
///
/// One tape belongs to one forward/backward pass. Parameters are bound with
/// [`Tape::param`]; repeated binds of the same id return the same node.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn finite(op: &'static str, v: &[f64]) -> Result<(), TensorError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn row_softmax(v: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, trainable: bool) -> Var {
        self.push(t, Op::Leaf, trainable)
    }

    /// Binds parameter `id` onto the tape, reusing an earlier bind.
    pub fn param(&mut self, id: usize, t: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(t.clone(), trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(dim_err("matmul", "operands must be rank 2"));
        }
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(dim_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let out = matmul_raw(ta.values(), tb.values(), m, k, n);
        finite("matmul", &out)?;
        let t = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::MatMul(a.0, b.0), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(dim_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.same_shape(op_name, a, b)?;
        let ta = self.value(a);
        let out: Vec<f64> = ta
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        finite(op_name, &out)?;
        let t = ta.with_values(out);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// `a` (m×n) plus row vector `b` (n or 1×n) added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        if tb.len() != n || tb.rows() != 1 {
            return Err(dim_err("add_row", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let bv = tb.values();
        let out: Vec<f64> = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        finite("add_row", &out)?;
        let t = ta.with_values(out);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(t, Op::AddRow(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let t = self.value(a).map(|x| x * c);
        finite("scale", t.values())?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::Scale(a.0, c), rg))
    }

    /// Multiplies every element of `a` by the single-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(dim_err("scale_by", "scale must have one element"));
        }
        let c = self.value(s).item();
        let t = self.value(a).map(|x| x * c);
        finite("scale_by", t.values())?;
        let rg = self.rg(&[a.0, s.0]);
        Ok(self.push(t, Op::ScaleBy(a.0, s.0), rg))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let t = self.value(a).map(f);
        finite(name, t.values())?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, op, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("silu", a, |x| x * sigmoid(x), Op::Silu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("softplus", a, softplus, Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("exp", a, f64::exp, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("log", a, f64::ln, Op::Log(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("square", a, |x| x * x, Op::Square(a.0))
    }

    /// Softmax over the last axis (per row for matrices).
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let out = row_softmax(ta.values(), ta.cols());
        finite("softmax", &out)?;
        let t = ta.with_values(out);
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::SoftmaxRows(a.0), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = Vec::with_capacity(ta.len());
        for row in ta.values().chunks(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        finite("log_softmax", &out)?;
        let t = ta.with_values(out);
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::LogSoftmaxRows(a.0), rg))
    }

    /// Picks elements by flat row-major index into a rank-1 tensor.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let n = ta.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Index {
                op: "gather",
                index: bad,
                extent: n,
            });
        }
        let out: Vec<f64> = indices.iter().map(|&i| ta.values()[i]).collect();
        let t = Tensor::vector(out);
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::Gather(a.0, indices.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(a).values().iter().sum();
        finite("sum", &[s])?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a.0), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(dim_err("mean", "empty tensor"));
        }
        let s: f64 = ta.values().iter().sum::<f64>() / ta.len() as f64;
        finite("mean", &[s])?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(dim_err("transpose", "operand must be rank 2"));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let t = Tensor::matrix(c, r, transpose_raw(ta.values(), r, c))?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::Transpose(a.0), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.rank() != 2 || start + len > ta.rows() {
            return Err(dim_err("slice_rows", format!("{start}+{len} of {:?}", ta.shape())));
        }
        let c = ta.cols();
        let t = Tensor::matrix(len, c, ta.values()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::SliceRows(a.0, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.rank() != 2 || start + len > ta.cols() {
            return Err(dim_err("slice_cols", format!("{start}+{len} of {:?}", ta.shape())));
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&ta.values()[row * c + start..row * c + start + len]);
        }
        let t = Tensor::matrix(r, len, out)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(t, Op::SliceCols(a.0, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let c = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| dim_err("concat_rows", "no inputs"))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != c || tp.rank() == 0 {
                return Err(dim_err("concat_rows", "column mismatch"));
            }
            rows += tp.rows();
            out.extend_from_slice(tp.values());
        }
        let t = Tensor::matrix(rows, c, out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(t, Op::ConcatRows(ids), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let r = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| dim_err("concat_cols", "no inputs"))?;
        if parts.iter().any(|&p| self.value(p).rows() != r || self.value(p).rank() != 2) {
            return Err(dim_err("concat_cols", "row mismatch"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for &p in parts {
                let tp = self.value(p);
                let c = tp.cols();
                out.extend_from_slice(&tp.values()[row * c..(row + 1) * c]);
            }
        }
        let t = Tensor::matrix(r, total, out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(t, Op::ConcatCols(ids), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let acc = |grads: &mut Vec<Option<Vec<f64>>>, j: usize, delta: Vec<f64>| {
                if !self.nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => {
                        for (e, d) in existing.iter_mut().zip(delta) {
                            *e += d;
                        }
                    }
                    slot => *slot = Some(delta),
                }
            };
            let needs = |j: usize| self.nodes[j].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if needs(*a) {
                        // dA = dC · Bᵀ
                        let bv = tb.values();
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        acc(&mut grads, *a, da);
                    }
                    if needs(*b) {
                        // dB = Aᵀ · dC
                        let av = ta.values();
                        let mut db = vec![0.0; k * n];
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for p in 0..k {
                                let arp = av[r * k + p];
                                if arp == 0.0 {
                                    continue;
                                }
                                let drow = &mut db[p * n..(p + 1) * n];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d += arp * gv;
                                }
                            }
                        }
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let n = self.nodes[*b].value.len();
                    if needs(*b) {
                        let mut db = vec![0.0; n];
                        for (idx, &gv) in g.iter().enumerate() {
                            db[idx % n] += gv;
                        }
                        acc(&mut grads, *b, db);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.iter().map(|x| -x).collect());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.values(), self.nodes[*b].value.values());
                    if needs(*a) {
                        acc(&mut grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.iter().map(|x| x * c).collect()),
                Op::ScaleBy(a, s) => {
                    let c = self.nodes[*s].value.item();
                    if needs(*s) {
                        let va = self.nodes[*a].value.values();
                        let ds: f64 = g.iter().zip(va).map(|(x, y)| x * y).sum();
                        acc(&mut grads, *s, vec![ds]);
                    }
                    acc(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::Tanh(a) => {
                    let y = node.value.values();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect());
                }
                Op::Silu(a) => {
                    let x = self.nodes[*a].value.values();
                    let d = g
                        .iter()
                        .zip(x)
                        .map(|(d, &x)| {
                            let s = sigmoid(x);
                            d * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.values();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect());
                }
                Op::Softplus(a) => {
                    let x = self.nodes[*a].value.values();
                    acc(&mut grads, *a, g.iter().zip(x).map(|(d, &x)| d * sigmoid(x)).collect());
                }
                Op::Exp(a) => {
                    let y = node.value.values();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(d, y)| d * y).collect());
                }
                Op::Log(a) => {
                    let x = self.nodes[*a].value.values();
                    acc(&mut grads, *a, g.iter().zip(x).map(|(d, x)| d / x).collect());
                }
                Op::Square(a) => {
                    let x = self.nodes[*a].value.values();
                    acc(&mut grads, *a, g.iter().zip(x).map(|(d, x)| 2.0 * d * x).collect());
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.values();
                    let cols = node.value.cols();
                    let mut d = vec![0.0; y.len()];
                    for ((drow, yrow), grow) in
                        d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = node.value.values();
                    let cols = node.value.cols();
                    let mut d = vec![0.0; y.len()];
                    for ((drow, yrow), grow) in
                        d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols))
                    {
                        let gs: f64 = grow.iter().sum();
                        for ((o, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *o = gv - yv.exp() * gs;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, idx) => {
                    let mut d = vec![0.0; self.nodes[*a].value.len()];
                    for (k, &j) in idx.iter().enumerate() {
                        d[j] += g[k];
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    acc(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::Transpose(a) => {
                    // node is c×r; gradient maps back to r×c
                    let (r, c) = (node.value.rows(), node.value.cols());
                    acc(&mut grads, *a, transpose_raw(&g, r, c));
                }
                Op::SliceRows(a, start) => {
                    let src = &self.nodes[*a].value;
                    let c = src.cols();
                    let mut d = vec![0.0; src.len()];
                    d[start * c..start * c + g.len()].copy_from_slice(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let (r, c) = (src.rows(), src.cols());
                    let len = node.value.cols();
                    let mut d = vec![0.0; src.len()];
                    for row in 0..r {
                        d[row * c + start..row * c + start + len]
                            .copy_from_slice(&g[row * len..(row + 1) * len]);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(ids) => {
                    let mut off = 0;
                    for &j in ids {
                        let n = self.nodes[j].value.len();
                        acc(&mut grads, j, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::ConcatCols(ids) => {
                    let total = node.value.cols();
                    let r = node.value.rows();
                    let mut off = 0;
                    for &j in ids {
                        let c = self.nodes[j].value.cols();
                        let mut d = Vec::with_capacity(r * c);
                        for row in 0..r {
                            d.extend_from_slice(&g[row * total + off..row * total + off + c]);
                        }
                        acc(&mut grads, j, d);
                        off += c;
                    }
                }
            }
        }

        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| {
                grads
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .map(|g| (id, self.nodes[v.0].value.with_values(g)))
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a reverse sweep: gradients for every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient w.r.t. a leaf; `None` when the leaf does not influence the loss
    /// or is not trainable.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| tape.value(v).with_values(g.clone()))
    }

    /// Gradient w.r.t. a bound parameter id.
    pub fn param(&self, id: usize) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.keys().copied()
    }

    pub fn into_params(self) -> HashMap<usize, Tensor> {
        self.params
    }
}
