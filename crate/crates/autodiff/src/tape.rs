//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the [`Tape`]; nodes only reference
//! earlier nodes, so the tape is always in topological order and a single
//! reverse sweep visits each node exactly once.
//!
//! ```
//! use trp_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(2.0));
//! let y = tape.mul(x, x);
//! let grads = tape.grad(y).unwrap();
//! assert_eq!(grads.get(x).item(), 4.0);
//! ```

use crate::error::AutodiffError;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous run of rows `start..start + len` reduced by the segment ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Maximum(Var, Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Broadcast(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<Segment>),
    SegmentMax(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for a single forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<Var>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` did not influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn try_get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    /// `(leaf, dLoss/dLeaf)` for every trainable leaf, in creation order.
    pub fn leaf_grads(&self) -> Vec<(Var, Tensor)> {
        self.leaves.iter().map(|&v| (v, self.get(v))).collect()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Trainable parameters registered with [`Tape::param`].
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    /// First node whose value contains a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(Var)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.leaves.push(v);
        v
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "elementwise operands must share a shape"
        );
        let value = self.value(a).zip_map(self.value(b), f);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum. At ties the gradient goes to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Logistic function, evaluated without overflow for any finite input.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Clamp at zero; the subgradient at exactly zero is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sums each row of a 2-D tensor into a `[rows, 1]` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let out = (0..r)
            .map(|i| t.data()[i * c..(i + 1) * c].iter().sum())
            .collect();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![r, 1], out), Op::RowSum(a), rg)
    }

    /// Broadcasts a scalar, a `[1, m]` row or an `[n, 1]` column to `[n, m]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        let (r, c) = if t.shape().len() == 1 {
            assert_eq!(t.len(), 1, "only scalars broadcast from 1-D");
            (1, 1)
        } else {
            (t.rows(), t.cols())
        };
        assert!(
            (r == 1 || r == rows) && (c == 1 || c == cols),
            "cannot broadcast {:?} to [{rows}, {cols}]",
            t.shape()
        );
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let si = if r == 1 { 0 } else { i };
                let sj = if c == 1 { 0 } else { j };
                out.push(t.data()[si * c + sj]);
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![rows, cols], out),
            Op::Broadcast(a),
            rg,
        )
    }

    /// `a + b` where `b` is a `[1, m]` row added to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = (self.value(a).rows(), self.value(a).cols());
        let bb = self.broadcast(b, r, c);
        self.add(a, bb)
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows(), rows, "concat row mismatch");
                self.value(p).cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(i < t.rows(), "gather index {i} out of range");
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![indices.len().max(1), c], pad(out, c)),
            Op::GatherRows(a, indices.to_vec()),
            rg,
        )
    }

    /// Mean over each row segment; empty segments produce a zero row.
    pub fn segment_mean(&mut self, a: Var, segments: &[Segment]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = vec![0.0; segments.len() * c];
        for (s, seg) in segments.iter().enumerate() {
            if seg.len == 0 {
                continue;
            }
            let o = &mut out[s * c..(s + 1) * c];
            for r in seg.start..seg.start + seg.len {
                for (x, &v) in o.iter_mut().zip(t.row_slice(r)) {
                    *x += v;
                }
            }
            let inv = 1.0 / seg.len as f64;
            o.iter_mut().for_each(|x| *x *= inv);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![segments.len(), c], out),
            Op::SegmentMean(a, segments.to_vec()),
            rg,
        )
    }

    /// Elementwise maximum over each row segment; empty segments produce a
    /// zero row. Ties route the gradient to the first maximal row.
    pub fn segment_max(&mut self, a: Var, segments: &[Segment]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = vec![0.0; segments.len() * c];
        let mut argmax = vec![usize::MAX; segments.len() * c];
        for (s, seg) in segments.iter().enumerate() {
            for r in seg.start..seg.start + seg.len {
                for (j, &v) in t.row_slice(r).iter().enumerate() {
                    let k = s * c + j;
                    if argmax[k] == usize::MAX || v > out[k] {
                        out[k] = v;
                        argmax[k] = r;
                    }
                }
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![segments.len(), c], out),
            Op::SegmentMax(a, argmax),
            rg,
        )
    }

    /// Gradient of a scalar `loss` with respect to every node.
    pub fn grad(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        Ok(self.backward_with_seed(loss, Tensor::full(shape, 1.0)))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`)
    /// back through the tape.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(output), "seed shape mismatch");
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            leaves: self.leaves.clone(),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let acc = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            debug_assert!(v.0 < idx, "tape is not topologically ordered");
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.matmul_t(bv), grads);
                }
                if self.rg(*b) {
                    acc(*b, av.t_matmul(g), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |x, y| x * y), grads);
                acc(*b, g.zip_map(av, |x, y| x * y), grads);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, |x, y| x / y), grads);
                if self.rg(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = out.zip_map(bv, |o, y| -o / y);
                    acc(*b, g.zip_map(&q, |x, y| x * y), grads);
                }
            }
            Op::Neg(a) => acc(*a, g.map(|x| -x), grads),
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, g.map(|x| x * c), grads)
            }
            Op::AddScalar(a) => acc(*a, g.clone(), grads),
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |x, s| x * s * (1.0 - s)), grads),
            Op::Tanh(a) => acc(*a, g.zip_map(out, |x, t| x * (1.0 - t * t)), grads),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |x, v| if v > 0.0 { x } else { 0.0 }), grads)
            }
            Op::Exp(a) => acc(*a, g.zip_map(out, |x, e| x * e), grads),
            Op::Log(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |x, v| x / v), grads)
            }
            Op::Maximum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = Tensor::from_parts(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data()))
                        .map(|(&x, (&p, &q))| if p >= q { x } else { 0.0 })
                        .collect(),
                );
                let gb = g.zip_map(&ga, |x, y| x - y);
                acc(*a, ga, grads);
                acc(*b, gb, grads);
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Tensor::full(self.shape(*a), s), grads)
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, Tensor::full(self.shape(*a), g.item() / n), grads)
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let (r, c) = (av.rows(), av.cols());
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    d.extend(std::iter::repeat_n(g.data()[i], c));
                }
                acc(*a, Tensor::from_parts(av.shape().to_vec(), d), grads)
            }
            Op::Broadcast(a) => {
                let av = self.value(*a);
                let (rows, cols) = (g.rows(), g.cols());
                let (r, c) = if av.shape().len() == 1 {
                    (1, 1)
                } else {
                    (av.rows(), av.cols())
                };
                let mut d = vec![0.0; r * c];
                for i in 0..rows {
                    for j in 0..cols {
                        let si = if r == 1 { 0 } else { i };
                        let sj = if c == 1 { 0 } else { j };
                        d[si * c + sj] += g.data()[i * cols + j];
                    }
                }
                acc(*a, Tensor::from_parts(av.shape().to_vec(), d), grads)
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        acc(p, Tensor::from_parts(vec![rows, w], d), grads);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(a, indices) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut d = vec![0.0; av.len()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g.data()[k * c + j];
                    }
                }
                acc(*a, Tensor::from_parts(av.shape().to_vec(), d), grads)
            }
            Op::SegmentMean(a, segments) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut d = vec![0.0; av.len()];
                for (s, seg) in segments.iter().enumerate() {
                    if seg.len == 0 {
                        continue;
                    }
                    let inv = 1.0 / seg.len as f64;
                    for r in seg.start..seg.start + seg.len {
                        for j in 0..c {
                            d[r * c + j] += g.data()[s * c + j] * inv;
                        }
                    }
                }
                acc(*a, Tensor::from_parts(av.shape().to_vec(), d), grads)
            }
            Op::SegmentMax(a, argmax) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut d = vec![0.0; av.len()];
                for (k, &r) in argmax.iter().enumerate() {
                    if r != usize::MAX {
                        d[r * c + k % c] += g.data()[k];
                    }
                }
                acc(*a, Tensor::from_parts(av.shape().to_vec(), d), grads)
            }
        }
    }
}

// Zero-row gathers keep a single zero row so shapes stay non-degenerate.
fn pad(mut data: Vec<f64>, cols: usize) -> Vec<f64> {
    if data.is_empty() {
        data.resize(cols, 0.0);
    }
    data
}
