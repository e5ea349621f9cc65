//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so node indices
//! are already a topological order. [`Graph::backward`] walks the tape once
//! in reverse and accumulates (sums) gradients into each input, which makes
//! shared subexpressions correct without extra bookkeeping.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Mul(Var, Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(f64, f64)>,
    },
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    Embedding { table: Var, indices: Vec<Vec<usize>> },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.data().iter().all(|x| !x.is_nan() && *x != f64::INFINITY),
            "forward produced NaN/+inf in {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a));
        let (k2, n) = as_matrix(self.value(b));
        if k != k2 || self.value(b).shape().len() != 2 {
            return shape_err(format!("matmul {m}x{k} by {k2}x{n}"));
        }
        let out = tensor::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a));
        let (n, k2) = as_matrix(self.value(b));
        if k != k2 {
            return shape_err(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ"));
        }
        let out = tensor::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(format!("add {:?} + {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Row-broadcast bias add: `x[i, j] + b[j]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        let n = vx.cols();
        if vb.len() != n {
            return shape_err(format!("bias of {} for {} columns", vb.len(), n));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(vb.data()) {
                *o += bb;
            }
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    /// Adds a constant tensor (e.g. an attention mask holding `-inf`).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != c.shape() {
            return shape_err(format!("add_const {:?} + {:?}", vx.shape(), c.shape()));
        }
        let data = vx.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::AddConst(x), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Scale(x, s), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err(format!("mul {:?} * {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x));
        if len == 0 || start + len > n {
            return shape_err(format!("slice [{start}, {}) of {n} columns", start + len));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Concatenation along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of zero tensors".into()));
        }
        let m = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return shape_err("concat row counts differ".into());
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x));
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return shape_err(format!("layer_norm params must have {n} entries"));
        }
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        {
            let (xv, g, b) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
            for i in 0..m {
                stats.push(tensor::layer_norm_row(
                    &xv[i * n..(i + 1) * n],
                    g,
                    b,
                    &mut out[i * n..(i + 1) * n],
                ));
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, stats }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| tensor::gelu(v)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gelu(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Relu(x), rg))
    }

    /// Row-wise softmax; `-inf` entries become exact zeros.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.cols();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            tensor::softmax_row(row)?;
        }
        let t = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Output row `i` is the sum of `table` rows listed in `indices[i]`.
    /// A single index per row is an ordinary embedding lookup.
    pub fn embedding(&mut self, table: Var, indices: Vec<Vec<usize>>) -> Result<Var> {
        let (v, n) = as_matrix(self.value(table));
        if indices.is_empty() {
            return Err(Error::Empty("embedding lookup with no rows".into()));
        }
        let tv = self.value(table).data();
        let mut data = vec![0.0; indices.len() * n];
        for (i, idx) in indices.iter().enumerate() {
            let out = &mut data[i * n..(i + 1) * n];
            for &r in idx {
                if r >= v {
                    return Err(Error::OutOfRange { index: r, limit: v });
                }
                for (o, &x) in out.iter_mut().zip(&tv[r * n..(r + 1) * n]) {
                    *o += x;
                }
            }
        }
        let t = Tensor::matrix(indices.len(), n, data)?;
        let rg = self.rg(table);
        Ok(self.push(t, Op::Embedding { table, indices }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Mean over rows of `-log softmax(logits)[i, targets[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, d) = as_matrix(self.value(logits));
        if targets.len() != m {
            return shape_err(format!("{} targets for {m} rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= d) {
            return Err(Error::OutOfRange { index: bad, limit: d });
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; m * d];
        let mut total = 0.0;
        for i in 0..m {
            let row = &lv[i * d..(i + 1) * d];
            let lse = tensor::log_sum_exp(row);
            total += lse - row[targets[i]];
            for (p, &z) in probs[i * d..(i + 1) * d].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return shape_err("backward needs a scalar loss".into());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.value(*a));
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC · Bᵀ
                acc(*a, &mut |ga| {
                    let d = tensor::matmul_nt(g, bv, m, n, k);
                    ga.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |gb| tensor::matmul_tn_acc(av, g, m, k, n, gb));
            }
            Op::MatMulNT(a, b) => {
                // C = A Bᵀ: dA = dC · B, dB = dCᵀ · A
                let (m, k) = as_matrix(self.value(*a));
                let n = self.value(*b).rows();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    let d = tensor::matmul(g, bv, m, n, k);
                    ga.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
                acc(*b, &mut |gb| tensor::matmul_tn_acc(g, av, m, n, k, gb));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, y)| *a += y));
                let n = self.value(*b).len();
                acc(*b, &mut |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                    }
                });
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, y)| *a += y));
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, y)| *a += s * y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let len = node.value.cols();
                acc(*x, &mut |gx| {
                    for (i, row) in g.chunks(len).enumerate() {
                        let dst = &mut gx[i * n + start..i * n + start + len];
                        dst.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    acc(*p, &mut |gp| {
                        for (i, row) in g.chunks(n).enumerate() {
                            let src = &row[offset..offset + w];
                            gp[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(a, y)| *a += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let n = self.value(*x).cols();
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let xhat = |i: usize, j: usize| (xv[i * n + j] - stats[i].0) * stats[i].1;
                acc(*gamma, &mut |gg| {
                    for i in 0..stats.len() {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * xhat(i, j);
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                    }
                });
                acc(*x, &mut |gx| {
                    let nf = n as f64;
                    for (i, &(_, rstd)) in stats.iter().enumerate() {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dxh = g[i * n + j] * gv[j];
                            s1 += dxh;
                            s2 += dxh * xhat(i, j);
                        }
                        for j in 0..n {
                            let dxh = g[i * n + j] * gv[j];
                            gx[i * n + j] += rstd * (dxh - s1 / nf - xhat(i, j) * s2 / nf);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * tensor::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for (i, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let s = tensor::dot(yr, gr);
                        for j in 0..n {
                            gx[i * n + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let n = node.value.cols();
                acc(*table, &mut |gt| {
                    for (i, idx) in indices.iter().enumerate() {
                        let src = &g[i * n..(i + 1) * n];
                        for &r in idx {
                            gt[r * n..(r + 1) * n].iter_mut().zip(src).for_each(|(a, y)| *a += y);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let d = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &mut gl[i * d..(i + 1) * d];
                        for (a, &p) in row.iter_mut().zip(&probs[i * d..(i + 1) * d]) {
                            *a += scale * p;
                        }
                        row[t] -= scale;
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
        }
    }
}
