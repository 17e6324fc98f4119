//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward sweep is a single reverse pass.

use std::collections::HashMap;

use crate::error::DiffError;
use crate::params::{Gradients, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::scalar::{order_invariant_sum, sigmoid, softplus, Scalar};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    MeanRows(Var),
    BroadcastRows(Var),
    Sum(Var),
    Mean(Var),
    Mask(Var, Vec<S>),
    GatherRows(Var, Vec<usize>),
    GaussianLogPdf { y: Vec<S>, mu: Var, sigma: Var },
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// One forward/backward computation. Build a fresh graph per episode.
#[derive(Debug)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims<S: Scalar>(t: &Tensor<S>) -> (usize, usize) {
    t.dims2().expect("graph tensors are rank 2")
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            leaf_grads: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value.data()[0]
    }

    /// Non-trainable input. Must be rank 2.
    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var, DiffError> {
        t.dims2()?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Trainable leaf not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor<S>) -> Result<Var, DiffError> {
        t.dims2()?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Leaf for a stored parameter. Repeated calls for the same id return
    /// the same node, so aliased parameters share one gradient.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(DiffError::Dimension(format!(
                "matmul {m}x{k} by {k2}x{n}"
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let src = self.value(a).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(n, m, out).unwrap(), Op::Transpose(a), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out).unwrap(), op, rg)
    }

    fn map_unary(&mut self, a: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    /// `a (m×n) + bias (1×n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (m, n) = self.shape(a);
        if self.shape(bias) != (1, n) {
            return Err(DiffError::Dimension(format!(
                "add_row: bias {:?} for {m}x{n}",
                self.shape(bias)
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a, bias), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "div")?;
        Ok(self.zip_with(a, b, Op::Div(a, b), |x, y| x / y))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        self.map_unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        self.map_unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Relu(a), |x| if x > S::zero() { x } else { S::zero() })
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, DiffError> {
        if self.value(a).data().iter().any(|&x| x <= S::zero()) {
            return Err(DiffError::Domain("ln of non-positive value".into()));
        }
        Ok(self.map_unary(a, Op::Ln(a), |x| x.ln()))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Square(a), |x| x * x)
    }

    /// Softmax over the last dimension, with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.data().iter().any(|x| x.is_nan()) {
            return Err(DiffError::NonFinite("softmax input"));
        }
        let out = softmax_rows(t);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Contract("concat of nothing".into()));
        };
        let m = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != m) {
            return Err(DiffError::Dimension("concat_cols: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let (m, n) = self.shape(a);
        if start >= end || end > n {
            return Err(DiffError::Dimension(format!(
                "slice_cols {start}..{end} of {n}"
            )));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, w, out)?, Op::SliceCols(a, start), rg))
    }

    /// Column-wise mean over rows → 1×n. The sum is order-invariant, so
    /// permuting the rows of `a` yields a bit-identical result.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let (m, n) = self.shape(a);
        let src = self.value(a).data();
        let inv = S::one() / S::from_usize(m).unwrap();
        let mut col = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            col.clear();
            col.extend((0..m).map(|i| src[i * n + j]));
            out.push(order_invariant_sum(&col) * inv);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(a), rg))
    }

    /// Repeat a 1×n row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var, DiffError> {
        let (r, n) = self.shape(a);
        if r != 1 || m == 0 {
            return Err(DiffError::Dimension(format!(
                "broadcast_rows of {r}x{n} to {m} rows"
            )));
        }
        let row = self.value(a).data().to_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&row);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::BroadcastRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: S = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s: S = t.data().iter().copied().sum::<S>() / S::from_usize(t.numel()).unwrap();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Elementwise product with a fixed mask.
    pub fn mask(&mut self, a: Var, mask: Vec<S>) -> Result<Var, DiffError> {
        if mask.len() != self.value(a).numel() {
            return Err(DiffError::Dimension("mask length".into()));
        }
        let (m, n) = self.shape(a);
        let out: Vec<S> = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &k)| x * k)
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Mask(a, mask), rg))
    }

    /// Inverted dropout: when `active`, zero each element with probability
    /// `rate` and scale survivors by `1/(1-rate)`; otherwise identity.
    pub fn dropout(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut RngStream,
        active: bool,
    ) -> Result<Var, DiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::Config(format!("dropout rate {rate} not in [0,1)")));
        }
        if !active || rate == 0.0 {
            return Ok(a);
        }
        let keep = S::from_real(1.0 / (1.0 - rate));
        let n = self.value(a).numel();
        let mask = (0..n)
            .map(|_| if rng.uniform() < rate { S::zero() } else { keep })
            .collect();
        self.mask(a, mask)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let (m, n) = self.shape(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= m) {
            return Err(DiffError::Dimension("gather_rows index out of range".into()));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(idx.len(), n, out)?,
            Op::GatherRows(a, idx.to_vec()),
            rg,
        ))
    }

    /// Elementwise Gaussian log-density `log N(y | mu, sigma²)`.
    pub fn gaussian_logpdf(&mut self, y: &[S], mu: Var, sigma: Var) -> Result<Var, DiffError> {
        self.same_shape(mu, sigma, "gaussian_logpdf")?;
        let (m, n) = self.shape(mu);
        if y.len() != m * n {
            return Err(DiffError::Dimension("gaussian_logpdf: y length".into()));
        }
        let s = self.value(sigma).data();
        if s.iter().any(|&v| v <= S::zero()) {
            return Err(DiffError::Domain("gaussian_logpdf: sigma <= 0".into()));
        }
        let mu_d = self.value(mu).data();
        let out: Vec<S> = (0..y.len())
            .map(|i| gaussian_logpdf(y[i], mu_d[i], s[i]))
            .collect();
        let rg = self.rg(mu) || self.rg(sigma);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::GaussianLogPdf {
                y: y.to_vec(),
                mu,
                sigma,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of trainable leaves are
    /// added to the graph's accumulators, so calling this twice doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.leaf_grads.get_mut(&i) {
                    Some(acc) => {
                        for (a, &v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => {
                        self.leaf_grads.insert(i, g);
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let send = |v: Var, contrib: Vec<S>, grads: &mut [Option<Vec<S>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let zip = |a: &[S], f: &dyn Fn(usize, S) -> S| -> Vec<S> {
            a.iter().enumerate().map(|(k, &x)| f(k, x)).collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if self.rg(*a) {
                    let mut ga = vec![S::zero(); m * k];
                    gemm_nt_acc(g, val(*b), &mut ga, m, n, k);
                    send(*a, ga, grads);
                }
                if self.rg(*b) {
                    let mut gb = vec![S::zero(); k * n];
                    gemm_tn_acc(val(*a), g, &mut gb, m, k, n);
                    send(*b, gb, grads);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.shape(*a);
                let mut ga = vec![S::zero(); m * n];
                for r in 0..m {
                    for c in 0..n {
                        ga[r * n + c] = g[c * m + r];
                    }
                }
                send(*a, ga, grads);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.to_vec(), grads);
            }
            Op::AddRow(a, bias) => {
                send(*a, g.to_vec(), grads);
                let (_, n) = self.shape(*a);
                let mut gb = vec![S::zero(); n];
                for row in g.chunks(n) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*bias, gb, grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec(), grads);
                send(*b, g.iter().map(|&v| -v).collect(), grads);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, zip(g, &|k, v| v * vb[k]), grads);
                send(*b, zip(g, &|k, v| v * va[k]), grads);
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, zip(g, &|k, v| v / vb[k]), grads);
                send(*b, zip(g, &|k, v| -v * va[k] / (vb[k] * vb[k])), grads);
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|&v| v * *c).collect(), grads),
            Op::AddScalar(a) => send(*a, g.to_vec(), grads),
            Op::Relu(a) => {
                let va = val(*a);
                send(
                    *a,
                    zip(g, &|k, v| if va[k] > S::zero() { v } else { S::zero() }),
                    grads,
                );
            }
            Op::Softplus(a) => {
                let va = val(*a);
                send(*a, zip(g, &|k, v| v * sigmoid(va[k])), grads);
            }
            Op::Exp(a) => {
                let o = out.data();
                send(*a, zip(g, &|k, v| v * o[k]), grads);
            }
            Op::Ln(a) => {
                let va = val(*a);
                send(*a, zip(g, &|k, v| v / va[k]), grads);
            }
            Op::Square(a) => {
                let va = val(*a);
                let two = S::one() + S::one();
                send(*a, zip(g, &|k, v| two * v * va[k]), grads);
            }
            Op::Softmax(a) => {
                let (m, n) = self.shape(*a);
                let o = out.data();
                let mut ga = vec![S::zero(); m * n];
                for r in 0..m {
                    let orow = &o[r * n..(r + 1) * n];
                    let grow = &g[r * n..(r + 1) * n];
                    let dot: S = orow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        ga[r * n + c] = orow[c] * (grow[c] - dot);
                    }
                }
                send(*a, ga, grads);
            }
            Op::ConcatCols(parts) => {
                let (m, n) = dims(out);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            gp.extend_from_slice(&g[r * n + offset..r * n + offset + w]);
                        }
                        send(p, gp, grads);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.shape(*a);
                let w = dims(out).1;
                let mut ga = vec![S::zero(); m * n];
                for r in 0..m {
                    ga[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                send(*a, ga, grads);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.shape(*a);
                let inv = S::one() / S::from_usize(m).unwrap();
                let mut ga = Vec::with_capacity(m * n);
                for _ in 0..m {
                    ga.extend(g.iter().map(|&v| v * inv));
                }
                send(*a, ga, grads);
            }
            Op::BroadcastRows(a) => {
                let n = self.shape(*a).1;
                let mut ga = vec![S::zero(); n];
                for row in g.chunks(n) {
                    for (acc, &v) in ga.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                send(*a, ga, grads);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0]; n], grads);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0] / S::from_usize(n).unwrap(); n], grads);
            }
            Op::Mask(a, mask) => send(*a, zip(g, &|k, v| v * mask[k]), grads),
            Op::GatherRows(a, idx) => {
                let (m, n) = self.shape(*a);
                let mut ga = vec![S::zero(); m * n];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..n {
                        ga[src * n + c] += g[r * n + c];
                    }
                }
                send(*a, ga, grads);
            }
            Op::GaussianLogPdf { y, mu, sigma } => {
                let (vm, vs) = (val(*mu), val(*sigma));
                send(
                    *mu,
                    zip(g, &|k, v| v * (y[k] - vm[k]) / (vs[k] * vs[k])),
                    grads,
                );
                send(
                    *sigma,
                    zip(g, &|k, v| {
                        let d = y[k] - vm[k];
                        v * (d * d / (vs[k] * vs[k] * vs[k]) - S::one() / vs[k])
                    }),
                    grads,
                );
            }
        }
    }

    /// Accumulated gradient of a leaf created with [`Graph::variable`] or
    /// [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.leaf_grads.get(&v.0).map(Vec::as_slice)
    }

    /// Gradients of every parameter leaf touched by this graph.
    pub fn param_grads(&self, n_params: usize) -> Gradients<S> {
        let mut out = Gradients::empty(n_params);
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort_by_key(|(id, _)| **id);
        for (id, v) in ids {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                out.accumulate(*id, g);
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }
}

/// Row-wise softmax of a matrix, max-subtracted.
pub fn softmax_rows<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    let n = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut z = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}

/// `log N(y | mu, sigma²) = -(y-mu)²/(2σ²) - ln σ - ½ ln 2π`.
#[inline]
pub fn gaussian_logpdf<S: Scalar>(y: S, mu: S, sigma: S) -> S {
    let d = (y - mu) / sigma;
    let half_ln_2pi = S::from_real(0.918_938_533_204_672_8);
    -S::half() * d * d - sigma.ln() - half_ln_2pi
}

/// Checked scalar form of [`gaussian_logpdf`].
pub fn gaussian_logpdf_checked<S: Scalar>(y: S, mu: S, sigma: S) -> Result<S, DiffError> {
    if !(sigma > S::zero()) {
        return Err(DiffError::Domain(format!("sigma = {sigma} must be > 0")));
    }
    Ok(gaussian_logpdf(y, mu, sigma))
}
