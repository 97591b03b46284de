use std::sync::Arc;

use super::kernels::{self, dot, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Relu,
    Elu,
    LeakyRelu(f64),
    Sigmoid,
    Log,
    Exp,
    Softplus,
    Power(f64),
    Clamp(f64, f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    PairDot(Var, Var, Arc<[usize]>, Arc<[usize]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// A tape built with [`Tape::no_grad`] evaluates values only and keeps no
/// backward records.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    faulty_elu: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_of(rows: usize, cols: usize, scalar: bool) -> Vec<usize> {
    if scalar {
        Vec::new()
    } else {
        vec![rows, cols]
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn bidx(i: usize, j: usize, rows: usize, cols: usize) -> usize {
    (if rows == 1 { 0 } else { i }) * cols + if cols == 1 { 0 } else { j }
}

/// Sums a `rows x cols` gradient down to a broadcast operand of `tr x tc`.
fn reduce_to(g: &[f64], rows: usize, cols: usize, tr: usize, tc: usize) -> Vec<f64> {
    if tr == rows && tc == cols {
        return g.to_vec();
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..rows {
        for j in 0..cols {
            out[bidx(i, j, tr, tc)] += g[i * cols + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
            faulty_elu: false,
        }
    }

    /// A tape that computes values without recording backward state.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
            faulty_elu: false,
        }
    }

    /// Negative control for gradient checking: elu backward passes the
    /// upstream gradient through unchanged for negative inputs.
    #[doc(hidden)]
    pub fn with_faulty_elu_backward(mut self) -> Self {
        self.faulty_elu = true;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of non-leaf operations holding backward state.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::from_rows(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::from_rows(n, m, out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ar, ac) = self.dims(a, op)?;
        let (br, bc) = self.dims(b, op)?;
        let shape_err = || Error::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        };
        let rows = broadcast_dim(ar, br).ok_or_else(shape_err)?;
        let cols = broadcast_dim(ac, bc).ok_or_else(shape_err)?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(f(ad[bidx(i, j, ar, ac)], bd[bidx(i, j, br, bc)]));
            }
        }
        let scalar = self.value(a).shape().is_empty() && self.value(b).shape().is_empty();
        Tensor::new(shape_of(rows, cols, scalar), out)
    }

    /// Elementwise sum; a size-1 axis on either side broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x += c);
        self.push(value, Op::Offset(a), &[a])
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let src = self.value(a);
        let data: Vec<f64> = match u {
            Unary::Relu => src.data().iter().map(|&x| x.max(0.0)).collect(),
            Unary::Elu => src
                .data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
                .collect(),
            Unary::LeakyRelu(s) => src
                .data()
                .iter()
                .map(|&x| if x > 0.0 { x } else { s * x })
                .collect(),
            Unary::Sigmoid => src.data().iter().map(|&x| kernels::sigmoid(x)).collect(),
            Unary::Log => {
                if let Some(bad) = src.data().iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                    return Err(Error::Domain {
                        op: "log",
                        message: format!("argument {bad} is not positive"),
                    });
                }
                src.data().iter().map(|&x| x.ln()).collect()
            }
            Unary::Exp => src.data().iter().map(|&x| x.exp()).collect(),
            Unary::Softplus => src.data().iter().map(|&x| kernels::softplus(x)).collect(),
            Unary::Power(p) => {
                let integral = p.fract() == 0.0;
                if let Some(bad) = src
                    .data()
                    .iter()
                    .find(|&&x| (x < 0.0 && !integral) || (x == 0.0 && p < 0.0))
                {
                    return Err(Error::Domain {
                        op: "power",
                        message: format!("{bad} raised to {p}"),
                    });
                }
                src.data().iter().map(|&x| x.powf(p)).collect()
            }
            Unary::Clamp(lo, hi) => src.data().iter().map(|&x| x.clamp(lo, hi)).collect(),
        };
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Unary(a, u), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu).expect("relu is total")
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Elu).expect("elu is total")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
            .expect("leaky relu is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp).expect("exp is total")
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus).expect("softplus is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn power(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, Unary::Power(p))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Unary::Clamp(lo, hi)).expect("clamp is total")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(Error::Empty("concat of zero tensors"))?;
        let (rows, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::from_rows(rows, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(Error::Empty("concat of zero tensors"))?;
        let (_, cols) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_rows(rows, cols, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "slice_rows")?;
        if start > end || end > rows {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let value = Tensor::from_rows(end - start, cols, data)?;
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "softmax_rows")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(cols.max(1)).take(rows) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let value = Tensor::from_rows(rows, cols, out)?;
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "log_softmax_rows")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(cols.max(1)).take(rows) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let value = Tensor::from_rows(rows, cols, out)?;
        Ok(self.push(value, Op::LogSoftmaxRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean over all elements; an empty tensor yields 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.numel();
        let s = if n == 0 {
            0.0
        } else {
            t.data().iter().sum::<f64>() / n as f64
        };
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Per-row sums, `m x n -> m x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims(a, "sum_cols")?;
        let data = self.value(a).data();
        let out = (0..rows)
            .map(|i| data[i * cols..(i + 1) * cols].iter().sum())
            .collect();
        let value = Tensor::from_rows(rows, 1, out)?;
        Ok(self.push(value, Op::SumCols(a), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.dims(a, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::from_rows(idx.len(), cols, out)?;
        Ok(self.push(value, Op::GatherRows(a, idx), &[a]))
    }

    /// `out[idx[e]] += a[e]` into an `n x cols` result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a, "scatter_add_rows")?;
        if rows != idx.len() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![idx.len(), n],
            });
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; n * cols];
        for (e, &i) in idx.iter().enumerate() {
            for (o, s) in out[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(&src[e * cols..(e + 1) * cols])
            {
                *o += s;
            }
        }
        let value = Tensor::from_rows(n, cols, out)?;
        Ok(self.push(value, Op::ScatterAddRows(a, idx), &[a]))
    }

    /// Column-wise softmax within groups of rows sharing a segment id.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segment: Arc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let (rows, cols) = self.dims(a, "segment_softmax")?;
        if rows != segment.len() || segment.iter().any(|&s| s >= n_segments) {
            return Err(Error::Shape {
                op: "segment_softmax",
                lhs: self.value(a).shape().to_vec(),
                rhs: vec![segment.len(), n_segments],
            });
        }
        let src = self.value(a).data();
        let mut max = vec![f64::NEG_INFINITY; n_segments * cols];
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..cols {
                let m = &mut max[s * cols + h];
                *m = m.max(src[e * cols + h]);
            }
        }
        let mut out = vec![0.0; rows * cols];
        let mut denom = vec![0.0; n_segments * cols];
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..cols {
                let v = (src[e * cols + h] - max[s * cols + h]).exp();
                out[e * cols + h] = v;
                denom[s * cols + h] += v;
            }
        }
        for (e, &s) in segment.iter().enumerate() {
            for h in 0..cols {
                out[e * cols + h] /= denom[s * cols + h];
            }
        }
        let value = Tensor::from_rows(rows, cols, out)?;
        Ok(self.push(value, Op::SegmentSoftmax(a, segment), &[a]))
    }

    /// Row-pair inner products `out[p] = a[ia[p]] . b[ib[p]]`, shape `P x 1`.
    pub fn pair_dot(&mut self, a: Var, b: Var, ia: Arc<[usize]>, ib: Arc<[usize]>) -> Result<Var> {
        let (ar, ac) = self.dims(a, "pair_dot")?;
        let (br, bc) = self.dims(b, "pair_dot")?;
        if ac != bc
            || ia.len() != ib.len()
            || ia.iter().any(|&i| i >= ar)
            || ib.iter().any(|&i| i >= br)
        {
            return Err(Error::Shape {
                op: "pair_dot",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = ia
            .iter()
            .zip(ib.iter())
            .map(|(&i, &j)| dot(&ad[i * ac..(i + 1) * ac], &bd[j * bc..(j + 1) * bc]))
            .collect();
        let value = Tensor::from_rows(ia.len(), 1, out)?;
        Ok(self.push(value, Op::PairDot(a, b, ia, ib), &[a, b]))
    }

    /// Reverse pass from a one-element `loss`; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        let nodes = &self.nodes;
        let faulty_elu = self.faulty_elu;
        let acc = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, g: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    leaves[idx] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2("matmul")?;
                    let (_, nn) = val(*b).dims2("matmul")?;
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        matmul_a_bt_acc(&g, val(*b).data(), &mut ga, m, nn, k);
                        acc(&mut grads, *a, ga);
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; k * nn];
                        matmul_at_b_acc(val(*a).data(), &g, &mut gb, m, k, nn);
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    let (m, nn) = val(*a).dims2("transpose")?;
                    let mut ga = vec![0.0; m * nn];
                    for i in 0..m {
                        for j in 0..nn {
                            ga[i * nn + j] = g[j * m + i];
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let (rows, cols) = node.value.dims2("add")?;
                    let (ar, ac) = val(*a).dims2("add")?;
                    let (br, bc) = val(*b).dims2("add")?;
                    acc(&mut grads, *a, reduce_to(&g, rows, cols, ar, ac));
                    let mut gb = reduce_to(&g, rows, cols, br, bc);
                    if matches!(node.op, Op::Sub(..)) {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    acc(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (rows, cols) = node.value.dims2("mul")?;
                    let (ar, ac) = val(*a).dims2("mul")?;
                    let (br, bc) = val(*b).dims2("mul")?;
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    let mut ga_full = vec![0.0; rows * cols];
                    let mut gb_full = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            let o = i * cols + j;
                            ga_full[o] = g[o] * bd[bidx(i, j, br, bc)];
                            gb_full[o] = g[o] * ad[bidx(i, j, ar, ac)];
                        }
                    }
                    acc(&mut grads, *a, reduce_to(&ga_full, rows, cols, ar, ac));
                    acc(&mut grads, *b, reduce_to(&gb_full, rows, cols, br, bc));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.iter().map(|x| x * c).collect()),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Unary(a, u) => {
                    let x = val(*a).data();
                    let y = node.value.data();
                    let ga = match *u {
                        Unary::Relu => zip_map(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }),
                        Unary::Elu if faulty_elu => g.clone(),
                        Unary::Elu => zip_map(&g, x, |g, x| if x > 0.0 { g } else { g * x.exp() }),
                        Unary::LeakyRelu(s) => {
                            zip_map(&g, x, |g, x| if x > 0.0 { g } else { s * g })
                        }
                        Unary::Sigmoid => zip_map(&g, y, |g, y| g * y * (1.0 - y)),
                        Unary::Log => zip_map(&g, x, |g, x| g / x),
                        Unary::Exp => zip_map(&g, y, |g, y| g * y),
                        Unary::Softplus => zip_map(&g, x, |g, x| g * kernels::sigmoid(x)),
                        Unary::Power(p) => zip_map(&g, x, |g, x| g * p * x.powf(p - 1.0)),
                        Unary::Clamp(lo, hi) => {
                            zip_map(&g, x, |g, x| if x >= lo && x <= hi { g } else { 0.0 })
                        }
                    };
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = node.value.dims2("concat_cols")?;
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        let mut gp = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                        }
                        acc(&mut grads, p, gp);
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        acc(&mut grads, p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::SliceRows(a, start) => {
                    let cols = val(*a).cols();
                    let mut ga = vec![0.0; val(*a).numel()];
                    ga[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let cols = node.value.cols().max(1);
                    let y = node.value.data();
                    let mut ga = vec![0.0; y.len()];
                    for ((gr, yr), out) in
                        g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let s = dot(gr, yr);
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o = yi * (gi - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let cols = node.value.cols().max(1);
                    let y = node.value.data();
                    let mut ga = vec![0.0; y.len()];
                    for ((gr, yr), out) in
                        g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let s: f64 = gr.iter().sum();
                        for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o = gi - yi.exp() * s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => acc(&mut grads, *a, vec![g[0]; val(*a).numel()]),
                Op::Mean(a) => {
                    let n = val(*a).numel();
                    acc(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::SumCols(a) => {
                    let cols = val(*a).cols();
                    let ga = g
                        .iter()
                        .flat_map(|&gi| std::iter::repeat_n(gi, cols))
                        .collect();
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let cols = val(*a).cols();
                    let mut ga = vec![0.0; val(*a).numel()];
                    for (e, &i) in idx.iter().enumerate() {
                        for (o, s) in ga[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[e * cols..(e + 1) * cols])
                        {
                            *o += s;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScatterAddRows(a, idx) => {
                    let cols = val(*a).cols();
                    let mut ga = Vec::with_capacity(idx.len() * cols);
                    for &i in idx.iter() {
                        ga.extend_from_slice(&g[i * cols..(i + 1) * cols]);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SegmentSoftmax(a, segment) => {
                    let cols = node.value.cols();
                    let y = node.value.data();
                    let n_segments = segment.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = vec![0.0; n_segments * cols];
                    for (e, &s) in segment.iter().enumerate() {
                        for h in 0..cols {
                            inner[s * cols + h] += y[e * cols + h] * g[e * cols + h];
                        }
                    }
                    let mut ga = vec![0.0; y.len()];
                    for (e, &s) in segment.iter().enumerate() {
                        for h in 0..cols {
                            let o = e * cols + h;
                            ga[o] = y[o] * (g[o] - inner[s * cols + h]);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::PairDot(a, b, ia, ib) => {
                    let cols = val(*a).cols();
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; ad.len()];
                        for ((&i, &j), &gp) in ia.iter().zip(ib.iter()).zip(&g) {
                            for (o, &bv) in ga[i * cols..(i + 1) * cols]
                                .iter_mut()
                                .zip(&bd[j * cols..(j + 1) * cols])
                            {
                                *o += gp * bv;
                            }
                        }
                        acc(&mut grads, *a, ga);
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; bd.len()];
                        for ((&i, &j), &gp) in ia.iter().zip(ib.iter()).zip(&g) {
                            for (o, &av) in gb[j * cols..(j + 1) * cols]
                                .iter_mut()
                                .zip(&ad[i * cols..(i + 1) * cols])
                            {
                                *o += gp * av;
                            }
                        }
                        acc(&mut grads, *b, gb);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}
