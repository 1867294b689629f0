//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and sums chain-rule contributions, so a node
//! consumed several times receives the sum of its consumers' gradients.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::param::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A computation graph. One graph is built per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of a scalar output with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dims2().expect("graph values are 2-D")
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
fn matmul_bt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`, giving `k×n`.
fn matmul_at_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(d, s)| *d += s),
        None => *dst = Some(src.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].value)
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = Self::as_2d(t);
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradient (used for inputs under gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        let t = Self::as_2d(t);
        self.push(t, Op::Leaf, true)
    }

    fn as_2d(mut t: Tensor) -> Tensor {
        if t.shape().len() == 1 {
            let n = t.numel();
            t = t.reshaped(vec![1, n]).expect("1-D reshape");
        }
        let shape = t.shape().to_vec();
        assert_eq!(shape.len(), 2, "graph leaves must be 1-D or 2-D, got {shape:?}");
        Tensor::new(shape, t.into_data()).expect("valid leaf")
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    /// Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let t = Self::as_2d(Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec()).expect("param"));
        let v = self.push(t, Op::Leaf, !p.frozen);
        self.params.insert(id, v);
        v
    }

    pub(crate) fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(dim_err!("matmul: [{m}×{k}] × [{k2}×{n}] inner dimensions differ"));
        }
        let c = matmul_raw(self.data(a), self.data(b), m, k, n);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(dim_err!("matmul_bt: [{m}×{k}] × [{n}×{k2}]ᵀ inner dimensions differ"));
        }
        let c = matmul_bt_raw(self.data(a), self.data(b), m, k, n);
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMulBt(a, b), ng))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(dim_err!("{op}: shapes {:?} and {:?} differ", sa, sb));
        }
        Ok(sa)
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = match op {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            _ => "mul",
        };
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![r, c], data)?, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    fn row_broadcast(&mut self, op: Op, x: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (m, n) = self.shape(x);
        let (r, n2) = self.shape(row);
        if r != 1 || n2 != n {
            return Err(dim_err!("row broadcast: [{r}×{n2}] does not broadcast over [{m}×{n}]"));
        }
        let rv = self.data(row).to_vec();
        let data = self
            .data(x)
            .chunks(n)
            .flat_map(|xr| xr.iter().zip(&rv).map(|(&a, &b)| f(a, b)).collect::<Vec<_>>())
            .collect();
        let ng = self.needs(&[x, row]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, op, ng))
    }

    /// Adds a `1×n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(Op::AddRow(x, row), x, row, |a, b| a + b)
    }

    /// Multiplies every row of `x` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(Op::MulRow(x, row), x, row, |a, b| a * b)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(x);
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let ng = self.needs(&[x]);
        self.push(Tensor::new(vec![r, c], data).expect("unary"), op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), libm::tanh)
    }

    fn check_mask(&self, x: Var, mask: Option<&[bool]>) -> Result<(usize, usize)> {
        let (m, n) = self.shape(x);
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(dim_err!("softmax mask has length {} for {} columns", mask.len(), n));
            }
            if !mask.iter().any(|&k| k) {
                return Err(dim_err!("softmax mask hides every column"));
            }
        }
        Ok((m, n))
    }

    /// Row-wise softmax. `mask[j] == false` gives column `j` a score of −∞, so
    /// its probability is exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.check_mask(x, mask)?;
        let mut out = vec![0.0; m * n];
        for (xr, orow) in self.data(x).chunks(n).zip(out.chunks_mut(n)) {
            let keep = |j: usize| mask.is_none_or(|mk| mk[j]);
            let max = (0..n).filter(|&j| keep(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                if keep(j) {
                    orow[j] = libm::exp(xr[j] - max);
                    sum += orow[j];
                }
            }
            orow.iter_mut().for_each(|v| *v /= sum);
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Softmax(x), ng))
    }

    /// Row-wise log-softmax; masked columns are −∞.
    pub fn log_softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.check_mask(x, mask)?;
        let mut out = vec![f64::NEG_INFINITY; m * n];
        for (xr, orow) in self.data(x).chunks(n).zip(out.chunks_mut(n)) {
            let keep = |j: usize| mask.is_none_or(|mk| mk[j]);
            let max = (0..n).filter(|&j| keep(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..n).filter(|&j| keep(j)).map(|j| libm::exp(xr[j] - max)).sum();
            let lse = max + libm::log(sum);
            for j in 0..n {
                if keep(j) {
                    orow[j] = xr[j] - lse;
                }
            }
        }
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::LogSoftmax(x), ng))
    }

    /// The element at flat index `idx`, as a `1×1` node.
    pub fn pick(&mut self, x: Var, idx: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if idx >= n {
            return Err(dim_err!("pick: index {idx} out of {n} elements"));
        }
        let v = self.data(x)[idx];
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, idx), ng))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| dim_err!("concat_cols of nothing"))?;
        let (m, _) = self.shape(first);
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != m) {
            return Err(dim_err!("concat_cols: {} rows vs {:?}", m, self.shape(bad)));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| dim_err!("concat_rows of nothing"))?;
        let (_, n) = self.shape(first);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != n) {
            return Err(dim_err!("concat_rows: {} columns vs {:?}", n, self.shape(bad)));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let m = data.len() / n;
        let ng = self.needs(parts);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if len == 0 || start + len > n {
            return Err(dim_err!("slice_cols {start}..{} of {n} columns", start + len));
        }
        let data = self.data(x).chunks(n).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols(x, start), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if len == 0 || start + len > m {
            return Err(dim_err!("slice_rows {start}..{} of {m} rows", start + len));
        }
        let data = self.data(x)[start * n..(start + len) * n].to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows(x, start), ng))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (m, n) = self.shape(x);
        let src = self.data(x);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::new(vec![n, m], data).expect("transpose"), Op::Transpose(x), ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if m * n != rows * cols {
            return Err(dim_err!("reshape [{m}×{n}] into [{rows}×{cols}]"));
        }
        let data = self.data(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::Reshape(x), ng))
    }

    /// Runs the backward pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::Usage(alloc::format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Only nodes that can carry gradient keep an entry.
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if ng(a) {
                    add_into(&mut grads[a.0], &matmul_bt_raw(g, self.data(*b), m, n, k));
                }
                if ng(b) {
                    add_into(&mut grads[b.0], &matmul_at_raw(self.data(*a), g, m, k, n));
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.shape(*a);
                let (n, _) = self.shape(*b);
                if ng(a) {
                    add_into(&mut grads[a.0], &matmul_raw(g, self.data(*b), m, n, k));
                }
                if ng(b) {
                    add_into(&mut grads[b.0], &matmul_at_raw(g, self.data(*a), m, n, k));
                }
            }
            Op::Add(a, b) => {
                if ng(a) {
                    add_into(&mut grads[a.0], g);
                }
                if ng(b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if ng(a) {
                    add_into(&mut grads[a.0], g);
                }
                if ng(b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if ng(a) {
                    let d: Vec<f64> = g.iter().zip(self.data(*b)).map(|(g, b)| g * b).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if ng(b) {
                    let d: Vec<f64> = g.iter().zip(self.data(*a)).map(|(g, a)| g * a).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::AddRow(x, r) => {
                let (_, n) = self.shape(*x);
                if ng(x) {
                    add_into(&mut grads[x.0], g);
                }
                if ng(r) {
                    let mut d = vec![0.0; n];
                    for gr in g.chunks(n) {
                        d.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                    add_into(&mut grads[r.0], &d);
                }
            }
            Op::MulRow(x, r) => {
                let (_, n) = self.shape(*x);
                let rv = self.data(*r);
                if ng(x) {
                    let d: Vec<f64> =
                        g.chunks(n).flat_map(|gr| gr.iter().zip(rv).map(|(g, r)| g * r).collect::<Vec<_>>()).collect();
                    add_into(&mut grads[x.0], &d);
                }
                if ng(r) {
                    let mut d = vec![0.0; n];
                    for (gr, xr) in g.chunks(n).zip(self.data(*x).chunks(n)) {
                        for j in 0..n {
                            d[j] += gr[j] * xr[j];
                        }
                    }
                    add_into(&mut grads[r.0], &d);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|g| g * c).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::AddScalar(x) => add_into(&mut grads[x.0], g),
            Op::Relu(x) => {
                // The subgradient at exactly 0 is taken as 0.
                let d: Vec<f64> = g.iter().zip(self.data(*x)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Softmax(x) => {
                let (_, n) = dims(&node.value);
                let mut d = vec![0.0; y.len()];
                for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::LogSoftmax(x) => {
                let (_, n) = dims(&node.value);
                let mut d = vec![0.0; y.len()];
                for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let gsum: f64 = gr.iter().zip(yr).filter(|(_, y)| y.is_finite()).map(|(g, _)| g).sum();
                    for j in 0..n {
                        if yr[j].is_finite() {
                            dr[j] = gr[j] - libm::exp(yr[j]) * gsum;
                        }
                    }
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::Pick(x, idx) => {
                let mut d = vec![0.0; self.value(*x).numel()];
                d[*idx] = g[0];
                add_into(&mut grads[x.0], &d);
            }
            Op::SumAll(x) => {
                let d = vec![g[0]; self.value(*x).numel()];
                add_into(&mut grads[x.0], &d);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims(&node.value);
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.shape(*p);
                    if ng(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        add_into(&mut grads[p.0], &d);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if ng(p) {
                        add_into(&mut grads[p.0], &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.shape(*x);
                let (_, len) = dims(&node.value);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    d[i * n + start..i * n + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::SliceRows(x, start) => {
                let (m, n) = self.shape(*x);
                let mut d = vec![0.0; m * n];
                d[start * n..start * n + g.len()].copy_from_slice(g);
                add_into(&mut grads[x.0], &d);
            }
            Op::Transpose(x) => {
                let (m, n) = self.shape(*x);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::Reshape(x) => add_into(&mut grads[x.0], g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_zero_and_hand_cases() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::identity(2));
        let a = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.data(c), &[1.0, 2.0, 3.0, 4.0]);

        let z = g.constant(Tensor::zeros(&[2, 3]));
        let any = g.constant(Tensor::filled(&[3, 4], 7.5));
        let c = g.matmul(z, any).unwrap();
        assert_eq!(g.shape(c), (2, 4));
        assert!(g.data(c).iter().all(|&v| v == 0.0));

        let b = g.constant(t(&[&[5.0], &[6.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.data(c), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2×3]") && msg.contains("× [2×3]"), "{msg}");
    }

    #[test]
    fn softmax_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[2.0, 2.0, 2.0], &[0.0, libm::log(3.0), -1e300]]));
        let y = g.softmax_rows(x, None).unwrap();
        let d = g.data(y);
        for v in &d[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d[3] - 0.25).abs() < 1e-12 && (d[4] - 0.75).abs() < 1e-12);
        assert_eq!(d[5], 0.0);
    }

    #[test]
    fn softmax_mask_zeroes_hidden_columns() {
        let mut g = Graph::new();
        let x = g.constant(t(&[&[1.0, 5.0, 2.0]]));
        let y = g.softmax_rows(x, Some(&[true, false, true])).unwrap();
        assert_eq!(g.data(y)[1], 0.0);
        assert!((g.data(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.softmax_rows(x, Some(&[false, false, false])).is_err());
        assert!(g.softmax_rows(x, Some(&[true])).is_err());
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(alloc::vec![-1.0, 0.0, 2.0, 3.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.data(y), &[0.0, 0.0, 2.0, 3.0]);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        // gradient at exactly zero is zero
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);

        let neg = g.constant(Tensor::row(alloc::vec![-3.0, -0.5]).unwrap());
        let y = g.relu(neg);
        assert_eq!(g.data(y), &[0.0, 0.0]);
    }

    #[test]
    fn fan_out_sums_contributions() {
        let x0 = Tensor::row(alloc::vec![0.3, -1.2, 2.0]).unwrap();
        let single = {
            let mut g = Graph::new();
            let x = g.input(x0.clone());
            let y = g.tanh(x);
            let s = g.sum_all(y);
            g.backward(s).unwrap().get(x).unwrap().to_vec()
        };
        let mut g = Graph::new();
        let x = g.input(x0);
        let a = g.tanh(x);
        let b = g.tanh(x);
        let y = g.add(a, b).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        for (d, s) in grads.get(x).unwrap().iter().zip(&single) {
            assert!((d - 2.0 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::row(alloc::vec![1.0, 2.0]).unwrap());
        let x = g.input(Tensor::row(alloc::vec![3.0, 4.0]).unwrap());
        let y = g.mul(c, x).unwrap();
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
    }

    fn random_tensor(seed: u64, r: usize, c: usize) -> Tensor {
        use rand::Rng;
        let mut rng = crate::seeded_rng(seed, 9);
        Tensor::new(alloc::vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn every_op_passes_gradient_check() {
        for seed in 0..5 {
            let a = random_tensor(seed, 3, 4);
            let b = random_tensor(seed + 100, 4, 2);
            let c = random_tensor(seed + 200, 3, 4);
            let row = random_tensor(seed + 300, 1, 4);
            let err = gradient_check(
                |g, v| {
                    let (a, b, c, row) = (v[0], v[1], v[2], v[3]);
                    let ab = g.matmul(a, b)?;
                    let abt = g.matmul_bt(a, c)?;
                    let sum = g.add(a, c)?;
                    let diff = g.sub(sum, c)?;
                    let prod = g.mul(diff, c)?;
                    let ar = g.add_row(prod, row)?;
                    let mr = g.mul_row(ar, row)?;
                    let sg = g.sigmoid(mr);
                    let th = g.tanh(sg);
                    let rl = g.relu(abt);
                    let sm = g.softmax_rows(rl, None)?;
                    let ls = g.log_softmax_rows(ab, Some(&[true, true]))?;
                    let tr = g.transpose(th);
                    let cc = g.concat_cols(&[tr, b])?;
                    let cr = g.concat_rows(&[th, a])?;
                    let sl = g.slice_cols(cc, 1, 3)?;
                    let sr = g.slice_rows(cr, 2, 3)?;
                    let rs = g.reshape(sr, 2, 6)?;
                    let pk = g.pick(ls, 3)?;
                    let sc = g.scale(rs, 0.7);
                    let om = g.one_minus(sl);
                    let smw = g.mul(sm, rl)?;
                    let s0 = g.sum_all(smw);
                    let s1 = g.sum_all(sc);
                    let s2 = g.sum_all(om);
                    let s12 = g.mul(s1, s2)?;
                    let s12 = g.add(s12, s0)?;
                    g.add(s12, pk)
                },
                &[a, b, c, row],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-7, "seed {seed}: {err}");
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized_and_shift_invariant(
            vals in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let n = vals.len();
            let mut g = Graph::new();
            let x = g.constant(Tensor::row(vals.clone()).unwrap());
            let xs = g.constant(Tensor::row(vals.iter().map(|v| v + shift).collect()).unwrap());
            let y = g.softmax_rows(x, None).unwrap();
            let ys = g.softmax_rows(xs, None).unwrap();
            let total: f64 = g.data(y).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(g.data(y).iter().all(|&p| p >= 0.0));
            for j in 0..n {
                prop_assert!((g.data(y)[j] - g.data(ys)[j]).abs() < 1e-12);
            }
        }
    }
}
