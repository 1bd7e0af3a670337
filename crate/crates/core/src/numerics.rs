//! Dense matrices and a small reverse-mode differentiation tape.
//!
//! The tape supports exactly the primitives the encoder-decoder losses need:
//! affine maps, elementwise sigmoid/tanh/exp, elementwise arithmetic,
//! column concatenation and slicing, sums and sums of squares, and scalar
//! scale/shift. There is no broadcasting; every operand shape must line up.
//! Random quantities (the Gaussian noise of the variational objective) enter
//! as ordinary constant inputs.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                detail: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// A 1×n row vector.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    detail: format!("row {i} has {} columns, expected {cols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape(), other.shape()),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }
}

/// `c = a·b + beta·c` for row-major `c` (m×n). Strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers whose extents match the given shapes and
    // strides; all matrices here are dense row-major (or their transposes).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Named matrices with a stable iteration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamCollection {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Data(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.position(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.position(name).map(move |i| &mut self.values[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn value(&self, i: usize) -> &Matrix {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.values[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.values.iter_mut()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn same_layout(&self, other: &ParamCollection) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &ParamCollection) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape {
                op: "ParamCollection::add_assign",
                detail: "parameter layouts differ".into(),
            });
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.values {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .map(Matrix::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Flat view over all scalars, in iteration order.
    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for m in &self.values {
            if idx < m.data.len() {
                return m.data[idx];
            }
            idx -= m.data.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn flat_set(&mut self, mut idx: usize, v: f64) {
        for m in &mut self.values {
            if idx < m.data.len() {
                m.data[idx] = v;
                return;
            }
            idx -= m.data.len();
        }
        panic!("flat parameter index out of range");
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(usize),
    Input,
    MatMul(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    ScaleShift(NodeId, f64),
    Sum(NodeId),
    SumSquares(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// An eagerly evaluated tape. Each operation computes its value immediately
/// and records enough to run the reverse pass from a scalar node.
pub struct Graph<'p> {
    params: &'p ParamCollection,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamCollection) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamCollection {
        self.params
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn describe(&self, id: NodeId) -> String {
        let node = &self.nodes[id.0];
        let (r, c) = node.value.shape();
        match node.op {
            Op::Param(i) => format!("param '{}' ({r}x{c})", self.params.name(i)),
            Op::Input => format!("input #{} ({r}x{c})", id.0),
            _ => format!("node #{} ({r}x{c})", id.0),
        }
    }

    fn shape_err(&self, op: &'static str, operands: &[NodeId]) -> Error {
        let detail = operands
            .iter()
            .map(|&n| self.describe(n))
            .collect::<Vec<_>>()
            .join(", ");
        Error::Shape { op, detail }
    }

    /// Leaf for a named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let idx = self.params.position(name).ok_or_else(|| Error::Shape {
            op: "param",
            detail: format!("unknown parameter '{name}'"),
        })?;
        if let Some(&id) = self.param_nodes.get(&idx) {
            return Ok(id);
        }
        let id = self.push(Op::Param(idx), self.params.value(idx).clone());
        self.param_nodes.insert(idx, id);
        Ok(id)
    }

    /// Constant leaf. Receives no gradient.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let out = va.matmul(vb)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `x·w + 1⊗b` with `b` an explicit 1×out row.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.cols != vw.rows || vb.rows != 1 || vb.cols != vw.cols {
            return Err(self.shape_err("affine", &[x, w, b]));
        }
        let mut out = Matrix::zeros(vx.rows, vw.cols);
        for r in 0..vx.rows {
            out.row_mut(r).copy_from_slice(&vb.data);
        }
        gemm(
            vx.rows,
            vx.cols,
            vw.cols,
            &vx.data,
            (vx.cols as isize, 1),
            &vw.data,
            (vw.cols as isize, 1),
            &mut out.data,
            1.0,
        );
        Ok(self.push(Op::Affine(x, w, b), out))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err(name, &[a, b]));
        }
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Matrix {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.value(a);
        let out = Matrix {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(op, out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// `scale·a + shift`, elementwise.
    pub fn scale_shift(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        self.unary(a, |x| scale * x + shift, Op::ScaleShift(a, scale))
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> NodeId {
        self.scale_shift(a, scale, 0.0)
    }

    /// Sum of all elements, as a 1×1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Matrix::filled(1, 1, s))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum_squares();
        self.push(Op::SumSquares(a), Matrix::filled(1, 1, s))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows,
            None => {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: "no operands".into(),
                })
            }
        };
        if parts.iter().any(|&p| self.value(p).rows != rows) {
            return Err(self.shape_err("concat_cols", parts));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
                off += v.cols;
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start >= end || end > va.cols {
            return Err(Error::Shape {
                op: "slice_cols",
                detail: format!("[{start}, {end}) of {}", self.describe(a)),
            });
        }
        let mut out = Matrix::zeros(va.rows, end - start);
        for r in 0..va.rows {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    /// Reverse pass from a scalar node. Returns gradients with the layout of
    /// the parameter collection; parameters never touched get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<ParamCollection> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(self.shape_err("backward (loss must be 1x1)", &[loss]));
        }
        if !lv.data[0].is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.data[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            grads[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        let mut out = self.params.zeros_like();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(p) => {
                    for (o, v) in out.values[*p].data.iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::Input => {}
                Op::MatMul(a, b) | Op::Affine(a, b, _) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows, va.cols, vb.cols);
                    // dA = dY·Bᵀ
                    let ga = acc(&mut grads, *a, m * k);
                    gemm(
                        m,
                        n,
                        k,
                        &g,
                        (n as isize, 1),
                        &vb.data,
                        (1, n as isize),
                        ga,
                        1.0,
                    );
                    // dB = Aᵀ·dY
                    let gb = acc(&mut grads, *b, k * n);
                    gemm(
                        k,
                        m,
                        n,
                        &va.data,
                        (1, k as isize),
                        &g,
                        (n as isize, 1),
                        gb,
                        1.0,
                    );
                    if let Op::Affine(_, _, bias) = &node.op {
                        let gbias = acc(&mut grads, *bias, n);
                        for r in 0..m {
                            for (o, v) in gbias.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let len = g.len();
                    for (o, v) in acc(&mut grads, *a, len).iter_mut().zip(&g) {
                        *o += v;
                    }
                    for (o, v) in acc(&mut grads, *b, len).iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::Sub(a, b) => {
                    let len = g.len();
                    for (o, v) in acc(&mut grads, *a, len).iter_mut().zip(&g) {
                        *o += v;
                    }
                    for (o, v) in acc(&mut grads, *b, len).iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let len = g.len();
                    let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                    if !matches!(self.nodes[a.0].op, Op::Input) {
                        for ((o, v), y) in acc(&mut grads, *a, len).iter_mut().zip(&g).zip(vb) {
                            *o += v * y;
                        }
                    }
                    if !matches!(self.nodes[b.0].op, Op::Input) {
                        for ((o, v), x) in acc(&mut grads, *b, len).iter_mut().zip(&g).zip(va) {
                            *o += v * x;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value.data;
                    for ((o, v), s) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *o += v * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value.data;
                    for ((o, v), t) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *o += v * (1.0 - t * t);
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value.data;
                    for ((o, v), e) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g).zip(y) {
                        *o += v * e;
                    }
                }
                Op::ScaleShift(a, s) => {
                    for (o, v) in acc(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *o += v * s;
                    }
                }
                Op::Sum(a) => {
                    let len = self.value(*a).data.len();
                    acc(&mut grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::SumSquares(a) => {
                    let va = &self.value(*a).data;
                    for (o, x) in acc(&mut grads, *a, va.len()).iter_mut().zip(va) {
                        *o += 2.0 * x * g[0];
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, cols) = node.value.shape();
                    let mut off = 0;
                    for p in parts {
                        let pc = self.value(*p).cols;
                        let gp = acc(&mut grads, *p, rows * pc);
                        for r in 0..rows {
                            for c in 0..pc {
                                gp[r * pc + c] += g[r * cols + off + c];
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = node.value.shape();
                    let ac = self.value(*a).cols;
                    let ga = acc(&mut grads, *a, rows * ac);
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * ac + start + c] += g[r * cols + c];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Builds a graph with `build`, then returns the scalar loss and its exact
/// gradient with respect to every parameter.
pub fn forward_backward<F>(params: &ParamCollection, build: F) -> Result<(f64, ParamCollection)>
where
    F: FnOnce(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).data[0], grads))
}

/// Largest relative discrepancy between analytic gradients and central
/// finite differences, `|ga - gfd| / max(1e-8, |ga| + |gfd|)`, over every
/// scalar parameter.
///
/// `loss_and_grads` must return the loss and the analytic gradient at the
/// given parameters.
pub fn check_gradients<F>(loss_and_grads: F, params: &ParamCollection, epsilon: f64) -> Result<f64>
where
    F: Fn(&ParamCollection) -> Result<(f64, ParamCollection)>,
{
    let (_, analytic) = loss_and_grads(params)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.num_scalars() {
        let x0 = params.flat_get(i);
        probe.flat_set(i, x0 + epsilon);
        let (up, _) = loss_and_grads(&probe)?;
        probe.flat_set(i, x0 - epsilon);
        let (down, _) = loss_and_grads(&probe)?;
        probe.flat_set(i, x0);
        let fd = (up - down) / (2.0 * epsilon);
        let ga = analytic.flat_get(i);
        let rel = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
