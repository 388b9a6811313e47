//! Reverse-mode differentiation over a recorded operation tape.
//!
//! The tape is define-by-run: each operation computes its forward value
//! immediately and appends a record holding its inputs and output. Records are
//! therefore stored in evaluation order, which is also a topological order, and
//! [`Tape::backward`] walks them in reverse accumulating adjoints.
//!
//! ```
//! use mvan::autodiff::Tape;
//! use mvan::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param("x", &Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.param("x").unwrap().item(), 6.0);
//! ```

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loss values are clamped at `-ln(1e-12)`, i.e. a probability floor of 1e-12.
pub const MAX_LOSS: f64 = 27.631_021_115_928_547;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Elu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::LeakyRelu(_) => "leaky_relu",
        }
    }
}

/// Softmax over the last axis of `x`, stabilised by subtracting the per-row max.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Act(Var, Activation),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentAggregate {
        coeff: Var,
        x: Var,
        offsets: Rc<[usize]>,
        targets: Rc<[usize]>,
    },
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    Reshape(Var),
    CrossEntropy(Var, usize, bool),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Operation tape. Owns every intermediate value of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to any node; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, v)| self.get(v))
    }

    /// Gradients of every named parameter registered on the tape.
    pub fn into_params(mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in std::mem::take(&mut self.params) {
            let g = self.grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]));
            out.insert(name, g);
        }
        out
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    /// A named trainable leaf. Registering the same name twice returns the
    /// existing leaf.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.constant(value.clone());
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value, "add")
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || tb.shape() != [1, ta.cols()] {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut value = ta.clone();
        let c = ta.cols();
        for row in value.data_mut().chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, b), value, "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value, "mul")
    }

    /// `alpha * x + beta`.
    pub fn affine(&mut self, x: Var, alpha: f64, beta: f64) -> Result<Var> {
        let value = self.value(x).map(|v| alpha * v + beta);
        self.push(Op::Affine(x, alpha), value, "affine")
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.affine(x, alpha, 0.0)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let value = self.value(x).map(|v| act.apply(v));
        self.push(Op::Act(x, act), value, act.name())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Elu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x));
        self.push(Op::Softmax(x), value, "softmax")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.value(first).rows();
        if parts
            .iter()
            .any(|&p| !self.value(p).is_matrix() || self.value(p).rows() != rows)
        {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), value, "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.value(first).cols();
        if parts
            .iter()
            .any(|&p| !self.value(p).is_matrix() || self.value(p).cols() != cols)
        {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let value = Tensor::matrix(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), value, "concat_rows")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() || len == 0 || start + len > t.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let c = t.cols();
        let value = Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        self.push(Op::SliceRows(x, start), value, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() || len == 0 || start + len > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let value = Tensor::matrix(t.rows(), len, data)?;
        self.push(Op::SliceCols(x, start), value, "slice_cols")
    }

    /// Row lookup: output row `k` is row `indices[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if indices.is_empty() || indices.iter().any(|&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("indices out of range for {:?}", t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(indices.len(), t.cols(), data)?;
        self.push(Op::GatherRows(x, indices.into()), value, "gather_rows")
    }

    /// Softmax of an `E x 1` score column within contiguous segments
    /// `offsets[i]..offsets[i + 1]`.
    pub fn segment_softmax(&mut self, scores: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(scores);
        validate_segments("segment_softmax", t, offsets)?;
        let mut value = t.clone();
        for w in offsets.windows(2) {
            softmax_in_place(&mut value.data_mut()[w[0]..w[1]]);
        }
        self.push(Op::SegmentSoftmax(scores, offsets.into()), value, "segment_softmax")
    }

    /// Sparse weighted aggregation: output row `i` is
    /// `sum_{e in segment i} coeff[e] * x[targets[e]]`.
    pub fn segment_aggregate(&mut self, coeff: Var, x: Var, offsets: &[usize], targets: &[usize]) -> Result<Var> {
        let (tc, tx) = (self.value(coeff), self.value(x));
        validate_segments("segment_aggregate", tc, offsets)?;
        if targets.len() != tc.rows() || targets.iter().any(|&t| t >= tx.rows()) {
            return Err(Error::shape("segment_aggregate", "targets do not match inputs"));
        }
        let n = offsets.len() - 1;
        let f = tx.cols();
        let mut data = vec![0.0; n * f];
        for i in 0..n {
            let out = &mut data[i * f..(i + 1) * f];
            for e in offsets[i]..offsets[i + 1] {
                let c = tc.data()[e];
                for (o, v) in out.iter_mut().zip(tx.row_slice(targets[e])) {
                    *o += c * v;
                }
            }
        }
        let value = Tensor::matrix(n, f, data)?;
        self.push(
            Op::SegmentAggregate {
                coeff,
                x,
                offsets: offsets.into(),
                targets: targets.into(),
            },
            value,
            "segment_aggregate",
        )
    }

    /// Column means, `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (o, v) in data.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        let value = Tensor::row(data);
        self.push(Op::MeanRows(x), value, "mean_rows")
    }

    /// Column maxima, `r x c -> 1 x c`; ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut data = t.row_slice(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for (j, &v) in t.row_slice(i).iter().enumerate() {
                if v > data[j] {
                    data[j] = v;
                    arg[j] = i;
                }
            }
        }
        let value = Tensor::row(data);
        self.push(Op::MaxRows(x, arg), value, "max_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value, "sum")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push(Op::Reshape(x), value, "reshape")
    }

    /// Cross-entropy of a `1 x C` logit row against class `label`, computed as
    /// `logsumexp(z) - z[label]` and clamped at [`MAX_LOSS`].
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rows() != 1 || label >= t.cols() {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {label} for logits {:?}", t.shape()),
            ));
        }
        let z = t.data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let raw = lse - z[label];
        let clamped = raw > MAX_LOSS;
        let value = Tensor::scalar(raw.min(MAX_LOSS));
        self.push(Op::CrossEntropy(logits, label, clamped), value, "cross_entropy")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.param_order.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                accumulate(grads, *a, matmul_nt(g, tb));
                accumulate(grads, *b, matmul_tn(ta, g));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, Tensor::row(gb));
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Affine(x, alpha) => {
                let alpha = *alpha;
                accumulate(grads, *x, g.map(|v| v * alpha));
            }
            Op::Act(x, act) => {
                let input = val(*x);
                let mut out = g.clone();
                for ((o, &xi), &yi) in out.data_mut().iter_mut().zip(input.data()).zip(node.value.data()) {
                    *o *= act.derivative(xi, yi);
                }
                accumulate(grads, *x, out);
            }
            Op::Softmax(x) => {
                let c = g.cols();
                let mut out = g.clone();
                for (orow, yrow) in out.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)) {
                    softmax_backward(orow, yrow);
                }
                accumulate(grads, *x, out);
            }
            Op::SegmentSoftmax(x, offsets) => {
                let mut out = g.clone();
                for w in offsets.windows(2) {
                    softmax_backward(&mut out.data_mut()[w[0]..w[1]], &node.value.data()[w[0]..w[1]]);
                }
                accumulate(grads, *x, out);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut data = Vec::with_capacity(g.rows() * w);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row_slice(r)[start..start + w]);
                    }
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data).unwrap());
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = val(p).len();
                    let data = g.data()[start..start + n].to_vec();
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data).unwrap());
                    start += n;
                }
            }
            Op::SliceRows(x, start) => {
                let t = val(*x);
                let c = t.cols();
                let mut out = Tensor::zeros(t.shape());
                out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, out);
            }
            Op::SliceCols(x, start) => {
                let t = val(*x);
                let mut out = Tensor::zeros(t.shape());
                let w = g.cols();
                for r in 0..t.rows() {
                    for j in 0..w {
                        out.set(r, start + j, g.get(r, j));
                    }
                }
                accumulate(grads, *x, out);
            }
            Op::GatherRows(x, indices) => {
                let t = val(*x);
                let c = t.cols();
                let slot = &mut grads[x.0];
                let out = slot.get_or_insert_with(|| Tensor::zeros(t.shape()));
                for (k, &i) in indices.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * c..(i + 1) * c];
                    for (o, v) in dst.iter_mut().zip(g.row_slice(k)) {
                        *o += v;
                    }
                }
            }
            Op::SegmentAggregate {
                coeff,
                x,
                offsets,
                targets,
            } => {
                let (tc, tx) = (val(*coeff), val(*x));
                let mut gc = vec![0.0; tc.len()];
                let mut gx = Tensor::zeros(tx.shape());
                let f = tx.cols();
                for i in 0..offsets.len() - 1 {
                    let gi = g.row_slice(i);
                    for e in offsets[i]..offsets[i + 1] {
                        let t = targets[e];
                        gc[e] = gi.iter().zip(tx.row_slice(t)).map(|(a, b)| a * b).sum();
                        let c = tc.data()[e];
                        for (o, v) in gx.data_mut()[t * f..(t + 1) * f].iter_mut().zip(gi) {
                            *o += c * v;
                        }
                    }
                }
                accumulate(grads, *coeff, Tensor::new(tc.shape().to_vec(), gc).unwrap());
                accumulate(grads, *x, gx);
            }
            Op::MeanRows(x) => {
                let t = val(*x);
                let r = t.rows() as f64;
                let mut out = Tensor::zeros(t.shape());
                let c = t.cols();
                for row in out.data_mut().chunks_mut(c) {
                    for (o, v) in row.iter_mut().zip(g.data()) {
                        *o = v / r;
                    }
                }
                accumulate(grads, *x, out);
            }
            Op::MaxRows(x, arg) => {
                let t = val(*x);
                let mut out = Tensor::zeros(t.shape());
                for (j, &i) in arg.iter().enumerate() {
                    out.set(i, j, g.data()[j]);
                }
                accumulate(grads, *x, out);
            }
            Op::Sum(x) => {
                let t = val(*x);
                accumulate(grads, *x, Tensor::full(t.shape(), g.item()));
            }
            Op::Reshape(x) => {
                let t = val(*x);
                accumulate(grads, *x, g.reshape(t.shape().to_vec()).unwrap());
            }
            Op::CrossEntropy(logits, label, clamped) => {
                let t = val(*logits);
                let mut out = if *clamped {
                    Tensor::zeros(t.shape())
                } else {
                    let mut p = softmax_rows(t);
                    p.data_mut()[*label] -= 1.0;
                    p
                };
                let s = g.item();
                out.data_mut().iter_mut().for_each(|v| *v *= s);
                accumulate(grads, *logits, out);
            }
        }
    }
}

fn validate_segments(op: &'static str, t: &Tensor, offsets: &[usize]) -> Result<()> {
    let ok = t.is_matrix()
        && t.cols() == 1
        && offsets.len() >= 2
        && offsets[0] == 0
        && *offsets.last().unwrap() == t.rows()
        && offsets.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!(
                "offsets do not partition a column of {:?} into non-empty segments",
                t.shape()
            ),
        ))
    }
}

fn softmax_backward(g: &mut [f64], y: &[f64]) {
    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    for (gi, &yi) in g.iter_mut().zip(y) {
        *gi = yi * (*gi - dot);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `a * b^T`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = a.row_slice(i);
        for j in 0..m {
            out[i * m + j] = ar.iter().zip(b.row_slice(j)).map(|(x, y)| x * y).sum();
        }
    }
    debug_assert_eq!(k, b.cols());
    Tensor::matrix(n, m, out).unwrap()
}

/// `a^T * b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let ar = a.row_slice(p);
        let br = b.row_slice(p);
        for (i, &x) in ar.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, y) in out[i * m..(i + 1) * m].iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    Tensor::matrix(n, m, out).unwrap()
}
