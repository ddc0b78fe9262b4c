use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{dim, Error, Result};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis along which a reduction or normalisation runs.
///
/// `Rows` walks down each column (axis 0), `Cols` walks across each row
/// (axis 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Ln,
    Neg,
    Sqrt,
}

/// Pointwise binary ops. The right operand may broadcast: each of its two
/// extents must equal the left one or be 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Softmax(Var, Axis),
    Sum(Var),
    SumAxis(Var, Axis),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Pick(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive ops in execution order; [`Tape::backward`] replays them
/// in reverse.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every recorded value.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the value does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn broadcast_ok(lhs: [usize; 2], rhs: [usize; 2]) -> bool {
    (rhs[0] == lhs[0] || rhs[0] == 1) && (rhs[1] == lhs[1] || rhs[1] == 1)
}

#[inline]
fn bcast_index(i: usize, j: usize, rhs: [usize; 2]) -> usize {
    let r = if rhs[0] == 1 { 0 } else { i };
    let c = if rhs[1] == 1 { 0 } else { j };
    r * rhs[1] + c
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copies a value into a fresh leaf; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// First element of a value; meant for `1 x 1` results.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn unary(&mut self, f: Unary, x: Var) -> Result<Var> {
        let input = &self.nodes[x.0].value;
        if f == Unary::Ln {
            if let Some(bad) = input.data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain {
                    op: "ln",
                    detail: format!("non-positive input {bad}"),
                });
            }
        }
        if f == Unary::Sqrt {
            if let Some(bad) = input.data().iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::Domain {
                    op: "sqrt",
                    detail: format!("negative input {bad}"),
                });
            }
        }
        let g: fn(f64) -> f64 = match f {
            Unary::Tanh => math::tanh,
            Unary::Sigmoid => math::sigmoid,
            Unary::Exp => math::exp,
            Unary::Ln => math::ln,
            Unary::Neg => |v| -v,
            Unary::Sqrt => math::sqrt,
        };
        let data = input.data().iter().map(|v| g(*v)).collect();
        let value = Tensor::new(input.rows(), input.cols(), data)?;
        Ok(self.push(value, Op::Unary(f, x)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x).expect("exp is total")
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Unary::Neg, x).expect("neg is total")
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Ln, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn binary(&mut self, f: Binary, a: Var, b: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (ls, rs) = (av.shape(), bv.shape());
        if !broadcast_ok(ls, rs) {
            return Err(dim("binary", format!("{f:?} of {ls:?} with {rs:?}")));
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = Vec::with_capacity(ad.len());
        for i in 0..ls[0] {
            for j in 0..ls[1] {
                let x = ad[i * ls[1] + j];
                let y = bd[bcast_index(i, j, rs)];
                out.push(match f {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                });
            }
        }
        let value = Tensor::new(ls[0], ls[1], out)?;
        Ok(self.push(value, Op::Binary(f, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let input = &self.nodes[x.0].value;
        let data = input.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(input.rows(), input.cols(), data).expect("same shape");
        self.push(value, Op::Affine(x, scale))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let input = &self.nodes[x.0].value;
        let data = input.data().iter().map(|v| v.max(lo).min(hi)).collect();
        let value = Tensor::new(input.rows(), input.cols(), data).expect("same shape");
        self.push(value, Op::Clamp(x, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; the natural form for `x · Wᵀ` with `W` stored out × in.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul_nt(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let input = &self.nodes[x.0].value;
        let value = softmax_value(input, axis);
        self.push(value, Op::Softmax(x, axis))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Sums along `axis`: `Rows` gives `1 x cols`, `Cols` gives `rows x 1`.
    pub fn sum_axis(&mut self, x: Var, axis: Axis) -> Var {
        let input = &self.nodes[x.0].value;
        let (r, c) = (input.rows(), input.cols());
        let d = input.data();
        let value = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += d[i * c + j];
                    }
                }
                Tensor::new(1, c, out).expect("shape")
            }
            Axis::Cols => {
                let out = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
                Tensor::new(r, 1, out).expect("shape")
            }
        };
        self.push(value, Op::SumAxis(x, axis))
    }

    pub fn mean_axis(&mut self, x: Var, axis: Axis) -> Var {
        let n = match axis {
            Axis::Rows => self.nodes[x.0].value.rows(),
            Axis::Cols => self.nodes[x.0].value.cols(),
        };
        let s = self.sum_axis(x, axis);
        self.affine(s, 1.0 / n.max(1) as f64, 0.0)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.nodes[x.0].value.reshape(rows, cols)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Horizontal concatenation of values with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(v) => self.nodes[v.0].value.rows(),
            None => return Err(dim("concat_cols", "no inputs".into())),
        };
        let mut cols = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(dim("concat_cols", format!("{} rows vs {rows}", t.rows())));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation of values with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(v) => self.nodes[v.0].value.cols(),
            None => return Err(dim("concat_rows", "no inputs".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.cols() != cols {
                return Err(dim("concat_rows", format!("{} cols vs {cols}", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let input = &self.nodes[x.0].value;
        if start + len > input.cols() {
            return Err(dim("slice_cols", format!("[{start}, {}) of {} columns", start + len, input.cols())));
        }
        let mut data = Vec::with_capacity(input.rows() * len);
        for i in 0..input.rows() {
            data.extend_from_slice(&input.row_slice(i)[start..start + len]);
        }
        let value = Tensor::new(input.rows(), len, data)?;
        Ok(self.push(value, Op::SliceCols(x, start)))
    }

    /// Gathers rows by index (embedding lookup).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let input = &self.nodes[x.0].value;
        let mut data = Vec::with_capacity(rows.len() * input.cols());
        for &r in rows {
            if r >= input.rows() {
                return Err(dim("select_rows", format!("row {r} of {}", input.rows())));
            }
            data.extend_from_slice(input.row_slice(r));
        }
        let value = Tensor::new(rows.len(), input.cols(), data)?;
        Ok(self.push(value, Op::SelectRows(x, rows.to_vec())))
    }

    /// Selects one element (row-major flat index) as a `1 x 1` value.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let input = &self.nodes[x.0].value;
        let v = *input
            .data()
            .get(index)
            .ok_or_else(|| dim("pick", format!("index {index} of {}", input.len())))?;
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, index)))
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate (`+=`)
    /// into every value used more than once.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(dim("backward", format!("output shape {:?}", out.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(f, x) => {
                let xv = self.value(*x).data();
                let buf = slot(grads, *x, xv.len());
                for k in 0..g.len() {
                    let yk = y.data()[k];
                    buf[k] += g[k]
                        * match f {
                            Unary::Tanh => 1.0 - yk * yk,
                            Unary::Sigmoid => yk * (1.0 - yk),
                            Unary::Exp => yk,
                            Unary::Ln => 1.0 / xv[k],
                            Unary::Neg => -1.0,
                            Unary::Sqrt => 0.5 / yk,
                        };
                }
            }
            Op::Binary(f, a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (ls, rs) = (av.shape(), bv.shape());
                {
                    let buf = slot(grads, *a, av.len());
                    for i in 0..ls[0] {
                        for j in 0..ls[1] {
                            let k = i * ls[1] + j;
                            let bval = bv.data()[bcast_index(i, j, rs)];
                            buf[k] += match f {
                                Binary::Add | Binary::Sub => g[k],
                                Binary::Mul => g[k] * bval,
                                Binary::Div => g[k] / bval,
                            };
                        }
                    }
                }
                let buf = slot(grads, *b, bv.len());
                for i in 0..ls[0] {
                    for j in 0..ls[1] {
                        let k = i * ls[1] + j;
                        let r = bcast_index(i, j, rs);
                        let bval = bv.data()[r];
                        buf[r] += match f {
                            Binary::Add => g[k],
                            Binary::Sub => -g[k],
                            Binary::Mul => g[k] * av.data()[k],
                            Binary::Div => -g[k] * av.data()[k] / (bval * bval),
                        };
                    }
                }
            }
            Op::Affine(x, scale) => {
                let buf = slot(grads, *x, g.len());
                for (b, gk) in buf.iter_mut().zip(g) {
                    *b += scale * gk;
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let buf = slot(grads, *x, g.len());
                for k in 0..g.len() {
                    if xv[k] >= *lo && xv[k] <= *hi {
                        buf[k] += g[k];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                matmul_nt_into(g, bv.data(), slot(grads, *a, m * k), m, n, k);
                matmul_tn_into(av.data(), g, slot(grads, *b, k * n), m, k, n);
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                matmul_into(g, bv.data(), slot(grads, *a, m * k), m, n, k);
                matmul_tn_into(g, av.data(), slot(grads, *b, n * k), m, n, k);
            }
            Op::Softmax(x, axis) => {
                let (r, c) = (y.rows(), y.cols());
                let yd = y.data();
                let buf = slot(grads, *x, r * c);
                match axis {
                    Axis::Cols => {
                        for i in 0..r {
                            let row = i * c..(i + 1) * c;
                            let dot: f64 = g[row.clone()].iter().zip(&yd[row.clone()]).map(|(a, b)| a * b).sum();
                            for k in row {
                                buf[k] += yd[k] * (g[k] - dot);
                            }
                        }
                    }
                    Axis::Rows => {
                        for j in 0..c {
                            let dot: f64 = (0..r).map(|i| g[i * c + j] * yd[i * c + j]).sum();
                            for i in 0..r {
                                let k = i * c + j;
                                buf[k] += yd[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                for b in slot(grads, *x, n).iter_mut() {
                    *b += g[0];
                }
            }
            Op::SumAxis(x, axis) => {
                let xv = self.value(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let buf = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += match axis {
                            Axis::Rows => g[j],
                            Axis::Cols => g[i],
                        };
                    }
                }
            }
            Op::Reshape(x) => {
                for (b, gk) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                    *b += gk;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, cols) = (y.rows(), y.cols());
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    let buf = slot(grads, *p, rows * pc);
                    for i in 0..rows {
                        for j in 0..pc {
                            buf[i * pc + j] += g[i * cols + offset + j];
                        }
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    for (b, gk) in slot(grads, *p, n).iter_mut().zip(&g[offset..offset + n]) {
                        *b += gk;
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (rows, xc, len) = (xv.rows(), xv.cols(), y.cols());
                let buf = slot(grads, *x, rows * xc);
                for i in 0..rows {
                    for j in 0..len {
                        buf[i * xc + start + j] += g[i * len + j];
                    }
                }
            }
            Op::SelectRows(x, rows) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let buf = slot(grads, *x, xv.len());
                for (out_row, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        buf[src * c + j] += g[out_row * c + j];
                    }
                }
            }
            Op::Pick(x, index) => {
                let n = self.value(*x).len();
                slot(grads, *x, n)[*index] += g[0];
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn softmax_value(input: &Tensor, axis: Axis) -> Tensor {
    let (r, c) = (input.rows(), input.cols());
    let d = input.data();
    let mut out = vec![0.0; r * c];
    match axis {
        Axis::Cols => {
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..c {
                    let e = math::exp(row[j] - max);
                    out[i * c + j] = e;
                    total += e;
                }
                for j in 0..c {
                    out[i * c + j] /= total;
                }
            }
        }
        Axis::Rows => {
            for j in 0..c {
                let max = (0..r).map(|i| d[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..r {
                    let e = math::exp(d[i * c + j] - max);
                    out[i * c + j] = e;
                    total += e;
                }
                for i in 0..r {
                    out[i * c + j] /= total;
                }
            }
        }
    }
    Tensor::new(r, c, out).expect("same shape")
}
