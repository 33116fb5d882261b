//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is built fresh for every dialog: forward operations append
//! nodes, [`Graph::backward`] walks the tape once in reverse and returns the
//! gradients of every bound parameter. Parameter values are borrowed from
//! the [`ParamStore`], never copied onto the tape.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MdstError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Matrix};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm(Var),
    Softmax(Var),
    LogSoftmax(Var),
    PickSum(Var, Arc<Vec<usize>>),
    Sum(Var),
    Gather(Var, Arc<Vec<usize>>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
    /// Per-row cached statistics (inverse standard deviation for layer norm).
    aux: Option<Vec<f64>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: Option<ChaCha8Rng>,
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'s> Graph<'s> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(512),
            bound: vec![None; store.len()],
            training: false,
            rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(store: &'s ParamStore, rng: ChaCha8Rng) -> Self {
        Self {
            training: true,
            rng: Some(rng),
            ..Self::new(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter, reusing the node if it is already on the tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(Matrix::zeros(0, 0), Op::Param(id), true);
        self.bound[id.0] = Some(v);
        v
    }

    /// Copies the value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(MdstError::Shape(what()))
        }
    }

    /// `op(a)·op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        self.check(k1 == k2, || {
            format!("matmul: {m}x{k1} by {k2}x{n} (ta={ta}, tb={tb})")
        })?;
        let mut out = Matrix::zeros(m, n);
        gemm(1.0, self.value(a), ta, self.value(b), tb, 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a·bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("{what}: {sa:?} vs {sb:?}"))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        self.check(rr == 1 && rc == c, || {
            format!("row broadcast: {r}x{c} with {rr}x{rc}")
        })?;
        let rv = self.value(row).row(0).to_vec();
        let mut out = self.value(a).clone();
        for i in 0..r {
            for (x, y) in out.row_mut(i).iter_mut().zip(&rv) {
                if mul {
                    *x *= y;
                } else {
                    *x += y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(row);
        let op = if mul {
            Op::MulRow(a, row)
        } else {
            Op::AddRow(a, row)
        };
        Ok(self.push(out, op, ng))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, false)
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, true)
    }

    /// Multiplies `a` by a `1×1` node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(self.shape(s) == (1, 1), || "scale_by expects a 1x1 scale".into())?;
        let k = self.value(s).get(0, 0);
        let out = self.value(a).map(|x| x * k);
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(out, Op::ScaleBy(a, s), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        let ng = self.ng(a);
        self.push(out, Op::AddConst(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Inverted dropout. Identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(MdstError::Config(format!("dropout rate {p} outside [0,1)")));
        }
        let (r, c) = self.shape(a);
        let keep = 1.0 / (1.0 - p);
        let rng = self.rng.as_mut().expect("training graph owns an rng");
        let mask = Matrix::from_fn(r, c, |_, _| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let mut out = Matrix::zeros(r, c);
        let mut inv = Vec::with_capacity(r);
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            inv.push(s);
        }
        let ng = self.ng(a);
        let v = self.push(out, Op::LayerNorm(a), ng);
        self.nodes[v.0].aux = Some(inv);
        v
    }

    /// Row-wise softmax. Entries equal to `-inf` get probability zero; a row
    /// that is entirely `-inf` maps to zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let mut out = Matrix::zeros(r, c);
        for i in 0..r {
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = out.row_mut(i);
            let mut total = 0.0;
            for (oj, &v) in o.iter_mut().zip(row) {
                *oj = (v - max).exp();
                total += *oj;
            }
            for oj in o.iter_mut() {
                *oj /= total;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let mut out = Matrix::zeros(r, c);
        for i in 0..r {
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out.row_mut(i).iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// `Σ_i a[i, idx[i]]` as a `1×1` node.
    pub fn pick_sum(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.shape(a);
        self.check(idx.len() == r && idx.iter().all(|&j| j < c), || {
            format!("pick_sum: {} indices into {r}x{c}", idx.len())
        })?;
        let x = self.value(a);
        let total: f64 = idx.iter().enumerate().map(|(i, &j)| x.get(i, j)).sum();
        let ng = self.ng(a);
        Ok(self.push(Matrix::scalar(total), Op::PickSum(a, Arc::new(idx)), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Matrix::scalar(total), Op::Sum(a), ng)
    }

    /// Row lookup: `out[i] = table[idx[i]]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(table);
        if let Some(&bad) = idx.iter().find(|&&j| j >= r) {
            return Err(MdstError::Vocab(format!("index {bad} out of range for {r} rows")));
        }
        let t = self.value(table);
        let mut out = Matrix::zeros(idx.len(), c);
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(j));
        }
        let ng = self.ng(table);
        Ok(self.push(out, Op::Gather(table, Arc::new(idx.to_vec())), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        self.check(start + len <= r, || format!("slice_rows {start}+{len} of {r}"))?;
        let x = self.value(a);
        let out = Matrix::from_vec(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceRows(a, start), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        self.check(start + len <= c, || format!("slice_cols {start}+{len} of {c}"))?;
        let x = self.value(a);
        let out = Matrix::from_fn(r, len, |i, j| x.get(i, start + j));
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::vstack(&mats)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        self.check(parts.iter().all(|&p| self.shape(p).0 == rows), || {
            "concat_cols: row counts differ".into()
        })?;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Reverse pass from a `1×1` output. Returns gradients for every bound parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(MdstError::Shape("backward expects a scalar output".into()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let mut out = vec![None; self.store.len()];
        for (pid, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                out[pid] = grads[v.0].take();
            }
        }
        Ok(Gradients::from_vec(out))
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let acc = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(m) => m.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let buf = grads[a.0].get_or_insert_with(|| Matrix::zeros(va.rows(), va.cols()));
                    if *ta {
                        gemm(1.0, vb, *tb, g, true, 1.0, buf);
                    } else {
                        gemm(1.0, g, false, vb, !tb, 1.0, buf);
                    }
                }
                if self.ng(*b) {
                    let buf = grads[b.0].get_or_insert_with(|| Matrix::zeros(vb.rows(), vb.cols()));
                    if *tb {
                        gemm(1.0, g, true, va, *ta, 1.0, buf);
                    } else {
                        gemm(1.0, va, !ta, g, false, 1.0, buf);
                    }
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(grads, *a, hadamard(g, vb));
                }
                if self.ng(*b) {
                    acc(grads, *b, hadamard(g, va));
                }
            }
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                if self.ng(*row) {
                    acc(grads, *row, column_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                if self.ng(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        for (x, r) in d.row_mut(i).iter_mut().zip(vr.row(0)) {
                            *x *= r;
                        }
                    }
                    acc(grads, *a, d);
                }
                if self.ng(*row) {
                    acc(grads, *row, column_sums(&hadamard(g, va)));
                }
            }
            Op::ScaleBy(a, s) => {
                let k = self.value(*s).get(0, 0);
                if self.ng(*a) {
                    acc(grads, *a, g.map(|x| x * k));
                }
                if self.ng(*s) {
                    let dot: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    acc(grads, *s, Matrix::scalar(dot));
                }
            }
            Op::Scale(a, k) => acc(grads, *a, g.map(|x| x * k)),
            Op::AddConst(a) => acc(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = zip_map(g, x, |gi, xi| gi * gelu_grad(xi));
                acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi));
                acc(grads, *a, d);
            }
            Op::LayerNorm(a) => {
                let inv = node.aux.as_ref().expect("layer norm caches statistics");
                let (r, c) = y.shape();
                let mut d = Matrix::zeros(r, c);
                for (i, &inv_i) in inv.iter().enumerate().take(r) {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for ((o, gi), yi) in d.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = inv_i * (gi - mean_g - yi * mean_gy);
                    }
                }
                acc(grads, *a, d);
            }
            Op::Softmax(a) => {
                let (r, c) = y.shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gi), yi) in d.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = yi * (gi - dot);
                    }
                }
                acc(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let (r, c) = y.shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let (gr, yr) = (g.row(i), y.row(i));
                    let total: f64 = gr.iter().sum();
                    for ((o, gi), yi) in d.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = gi - yi.exp() * total;
                    }
                }
                acc(grads, *a, d);
            }
            Op::PickSum(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                let s = g.get(0, 0);
                for (i, &j) in idx.iter().enumerate() {
                    d.set(i, j, d.get(i, j) + s);
                }
                acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Gather(table, idx) => {
                let (r, c) = self.shape(*table);
                let buf = grads[table.0].get_or_insert_with(|| Matrix::zeros(r, c));
                for (i, &j) in idx.iter().enumerate() {
                    for (o, gi) in buf.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += gi;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.shape(*a);
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let pr = self.shape(p).0;
                    if self.ng(p) {
                        let d = Matrix::from_vec(pr, c, g.data()[off * c..(off + pr) * c].to_vec())
                            .expect("slice shape");
                        acc(grads, p, d);
                    }
                    off += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if self.ng(p) {
                        let d = Matrix::from_fn(pr, pc, |i, j| g.get(i, off + j));
                        acc(grads, p, d);
                    }
                    off += pc;
                }
            }
        }
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    zip_map(a, b, |x, y| x * y)
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, x) in out.row_mut(0).iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    out
}
