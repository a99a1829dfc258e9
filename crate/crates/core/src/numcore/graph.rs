//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is a single reverse sweep.

use crate::error::{Error, Result};

use super::nearest::nearest;
use super::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    BroadcastRows(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    Chamfer {
        a: Var,
        b: Var,
        a_to_b: Vec<usize>,
        b_to_a: Vec<usize>,
    },
    Bce(Var, T),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Reshape(..) => "reshape",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::MaxRows(..) => "max_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::GatherRows(..) => "gather_rows",
            Op::Chamfer { .. } => "chamfer",
            Op::Bce(..) => "bce",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to the leaf `v`; zeros when `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradient out without cloning.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(id)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf with zero gradient by definition.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// First node whose forward value contained NaN or ±∞.
    pub fn non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `x + row` with `row` (`1 × C`) broadcast over the rows of `x` (`R × C`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(xv.cols(), rv.cols(), "add_row column mismatch");
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (v, &b) in chunk.iter_mut().zip(rv.data()) {
                *v = *v + b;
            }
        }
        let value = Tensor::matrix(xv.rows(), c, data);
        let ng = self.ng(x) || self.ng(row);
        self.push(value, Op::AddRow(x, row), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), rows, "concat_cols row mismatch");
                self.value(p).cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let c = v.cols();
        assert!(start + len <= v.rows(), "slice_rows out of range");
        let data = v.data()[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        self.push(Tensor::matrix(len, c, data), Op::SliceRows(x, start), ng)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let ng = self.ng(x);
        self.push(Tensor::matrix(rows, len, data), Op::SliceCols(x, start), ng)
    }

    /// Repeats a `1 × C` row `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Var {
        let v = self.value(x);
        assert_eq!(v.rows(), 1, "broadcast_rows expects a row vector");
        let data = v.data().repeat(rows);
        let value = Tensor::matrix(rows, v.cols(), data);
        let ng = self.ng(x);
        self.push(value, Op::BroadcastRows(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self
            .value(x)
            .clone()
            .reshape(shape)
            .expect("reshape element count");
        let ng = self.ng(x);
        self.push(value, Op::Reshape(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, T::sqrt, Op::Sqrt(x))
    }

    /// Column-wise maximum over rows (`R × C → 1 × C`); ties go to the lowest
    /// row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(rows > 0, "max over zero rows");
        let mut best = v.row_slice(0).to_vec();
        let mut arg = vec![0usize; cols];
        for r in 1..rows {
            for (c, &val) in v.row_slice(r).iter().enumerate() {
                if val > best[c] {
                    best[c] = val;
                    arg[c] = r;
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::matrix(1, cols, best), Op::MaxRows(x, arg), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::lit(v.len() as f64);
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            data.extend_from_slice(v.row_slice(i));
        }
        let value = Tensor::matrix(index.len(), c, data);
        let ng = self.ng(x);
        self.push(value, Op::GatherRows(x, index), ng)
    }

    /// Symmetric Chamfer distance between two `q × 3` point sets:
    /// `½ (mean_a min_b ‖a − b‖ + mean_b min_a ‖b − a‖)`.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), 3, "chamfer expects q × 3 points");
        assert_eq!(bv.cols(), 3, "chamfer expects q × 3 points");
        assert!(av.rows() > 0 && bv.rows() > 0, "chamfer of an empty cloud");
        let ab = nearest(av.data(), bv.data());
        let ba = nearest(bv.data(), av.data());
        let value = chamfer_value(&ab.dist2, &ba.dist2);
        let ng = self.ng(a) || self.ng(b);
        self.push(
            Tensor::scalar(value),
            Op::Chamfer {
                a,
                b,
                a_to_b: ab.index,
                b_to_a: ba.index,
            },
            ng,
        )
    }

    /// Binary cross-entropy of a one-element probability against `label`.
    pub fn bce(&mut self, prob: Var, label: T) -> Var {
        let p = clamp_prob(self.value(prob).item());
        let loss = -(label * p.ln() + (T::one() - label) * (T::one() - p).ln());
        let ng = self.ng(prob);
        self.push(Tensor::scalar(loss), Op::Bce(prob, label), ng)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        if let Some((node, op)) = self.first_non_finite {
            if node <= root.0 {
                return Err(Error::NonFinite { node, op });
            }
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
            self.propagate(id, &g, &mut grads);
            // Only leaf gradients are kept; intermediates are released as the
            // sweep passes them.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let shapes = self.nodes[..=root.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, g.clone());
                if self.ng(*row) {
                    let c = g.cols();
                    let mut col = vec![T::zero(); c];
                    for chunk in g.data().chunks_exact(c) {
                        for (s, &v) in col.iter_mut().zip(chunk) {
                            *s = *s + v;
                        }
                    }
                    self.acc(grads, *row, Tensor::matrix(1, c, col));
                }
            }
            Op::Scale(x, s) => self.acc(grads, *x, g.scale(*s)),
            Op::Offset(x) => self.acc(grads, *x, g.clone()),
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.matmul_t(false, self.value(*b), true));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.value(*a).matmul_t(true, g, false));
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let rows = g.rows();
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[start..start + w]);
                        }
                        self.acc(grads, p, Tensor::matrix(rows, w, data));
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if self.ng(p) {
                        let data = g.data()[start * c..(start + h) * c].to_vec();
                        self.acc(grads, p, Tensor::matrix(h, c, data));
                    }
                    start += h;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut full = Tensor::zeros(xv.shape());
                full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.acc(grads, *x, full);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (rows, c, w) = (xv.rows(), xv.cols(), g.cols());
                let mut full = Tensor::zeros(xv.shape());
                for r in 0..rows {
                    full.data_mut()[r * c + start..r * c + start + w]
                        .copy_from_slice(g.row_slice(r));
                }
                self.acc(grads, *x, full);
            }
            Op::BroadcastRows(x) => {
                let c = g.cols();
                let mut col = vec![T::zero(); c];
                for chunk in g.data().chunks_exact(c) {
                    for (s, &v) in col.iter_mut().zip(chunk) {
                        *s = *s + v;
                    }
                }
                self.acc(grads, *x, Tensor::matrix(1, c, col));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.acc(grads, *x, g.clone().reshape(&shape).expect("reshape back"));
            }
            Op::Relu(x) => {
                let d = g.zip_map(out, |gv, o| if o > T::zero() { gv } else { T::zero() });
                self.acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(out, |gv, o| gv * (T::one() - o * o));
                self.acc(grads, *x, d);
            }
            Op::Exp(x) => self.acc(grads, *x, g.zip_map(out, |gv, o| gv * o)),
            Op::Log(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv / xv);
                self.acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(out, |gv, o| gv * o * (T::one() - o));
                self.acc(grads, *x, d);
            }
            Op::Softplus(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(xv));
                self.acc(grads, *x, d);
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                let d = g.zip_map(self.value(*x), |gv, xv| gv * two * xv);
                self.acc(grads, *x, d);
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let d = g.zip_map(out, |gv, o| gv * half / o);
                self.acc(grads, *x, d);
            }
            Op::MaxRows(x, arg) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut full = Tensor::zeros(xv.shape());
                for (col, (&r, &gv)) in arg.iter().zip(g.data()).enumerate() {
                    full.data_mut()[r * c + col] = gv;
                }
                self.acc(grads, *x, full);
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.acc(grads, *x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = g.item() / T::lit(xv.len() as f64);
                self.acc(grads, *x, Tensor::full(xv.shape(), gv));
            }
            Op::GatherRows(x, index) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut full = Tensor::zeros(xv.shape());
                let fd = full.data_mut();
                for (i, &src) in index.iter().enumerate() {
                    for k in 0..c {
                        fd[src * c + k] = fd[src * c + k] + g.data()[i * c + k];
                    }
                }
                self.acc(grads, *x, full);
            }
            Op::Chamfer {
                a,
                b,
                a_to_b,
                b_to_a,
            } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                let half = T::lit(0.5) * g.item();
                let ca = half / T::lit(av.rows() as f64);
                let cb = half / T::lit(bv.rows() as f64);
                chamfer_pull(av.data(), bv.data(), a_to_b, ca, ga.data_mut(), gb.data_mut());
                chamfer_pull(bv.data(), av.data(), b_to_a, cb, gb.data_mut(), ga.data_mut());
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Bce(p, label) => {
                let pv = self.value(*p).item();
                let lo = T::lit(BCE_EPS);
                let hi = T::one() - lo;
                let d = if pv > lo && pv < hi {
                    -*label / pv + (T::one() - *label) / (T::one() - pv)
                } else {
                    T::zero()
                };
                let shape = self.value(*p).shape().to_vec();
                self.acc(grads, *p, Tensor::full(&shape, d * g.item()));
            }
        }
    }
}

pub(crate) fn chamfer_value<T: Scalar>(a_to_b: &[T], b_to_a: &[T]) -> T {
    let dir = |d2: &[T]| d2.iter().fold(T::zero(), |s, &v| s + v.sqrt()) / T::lit(d2.len() as f64);
    T::lit(0.5) * (dir(a_to_b) + dir(b_to_a))
}

/// Gradient of `coef · Σ_i ‖src_i − dst_nn(i)‖` scattered into both sets.
fn chamfer_pull<T: Scalar>(
    src: &[T],
    dst: &[T],
    nn: &[usize],
    coef: T,
    g_src: &mut [T],
    g_dst: &mut [T],
) {
    for (i, &j) in nn.iter().enumerate() {
        let p = &src[3 * i..3 * i + 3];
        let q = &dst[3 * j..3 * j + 3];
        let d = super::nearest::dist2(p, q).sqrt();
        // Subgradient zero at coincident points.
        if d <= T::zero() {
            continue;
        }
        let s = coef / d;
        for k in 0..3 {
            let v = s * (p[k] - q[k]);
            g_src[3 * i + k] = g_src[3 * i + k] + v;
            g_dst[3 * j + k] = g_dst[3 * j + k] - v;
        }
    }
}

pub(crate) fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::lit(BCE_EPS);
    p.max(lo).min(T::one() - lo)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
