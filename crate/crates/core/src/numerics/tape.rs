//! Reverse-mode differentiation over whole matrices.
//!
//! A [`Tape`] records every primitive applied to tracked matrices in
//! execution order. Operands always precede their consumers, so the
//! backward sweep is a single reverse pass over the node list.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::matrix::{self, same_shape, Matrix};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// `∂loss/∂param` for every named parameter registered on a tape.
pub type GradientSet = BTreeMap<String, Matrix>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    /// Adds a `1 × c` row to every row of the left operand.
    AddRow(usize, usize),
    Scale(usize, f64),
    Offset(usize, f64),
    /// Multiplies a matrix by a `1 × 1` node.
    ScaleBy(usize, usize),
    Transpose(usize),
    LeakyRelu(usize, f64),
    Elu(usize),
    Relu(usize),
    Softmax(usize, Option<Arc<[bool]>>),
    /// `out[i][j] = col[i] + row[j]` for an `n × 1` column and a `1 × m` row.
    OuterSum(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    MeanRows(usize),
    RepeatRows(usize, usize),
    RowCosine(usize, usize),
    Sum(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    param: Option<String>,
}

/// Ordered record of matrix operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable parameter. Names must be unique per tape.
    pub fn param(&mut self, name: impl Into<String>, value: Matrix) -> Result<Var> {
        let name = name.into();
        if self.nodes.iter().any(|n| n.param.as_deref() == Some(name.as_str())) {
            return Err(Error::Contract(format!("parameter {name} registered twice")));
        }
        check_finite("param", &value)?;
        Ok(self.push_node(Node {
            value,
            op: Op::Leaf,
            param: Some(name),
        }))
    }

    /// Records an untracked input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_node(Node {
            value,
            op: Op::Leaf,
            param: None,
        })
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.idx].value
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).to_scalar()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Contract("variable does not belong to this tape".into()));
        }
        Ok(v.idx)
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        check_finite(op_name(&op), &value)?;
        Ok(self.push_node(Node {
            value,
            op,
            param: None,
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::MatMul(self.index(a)?, self.index(b)?);
        self.push(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Add(self.index(a)?, self.index(b)?);
        self.push(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Sub(self.index(a)?, self.index(b)?);
        self.push(op)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::Hadamard(self.index(a)?, self.index(b)?);
        self.push(op)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let op = Op::AddRow(self.index(a)?, self.index(row)?);
        self.push(op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let op = Op::Scale(self.index(a)?, s);
        self.push(op)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let op = Op::Offset(self.index(a)?, c);
        self.push(op)
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let op = Op::ScaleBy(self.index(a)?, self.index(s)?);
        self.push(op)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let op = Op::Transpose(self.index(a)?);
        self.push(op)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let op = Op::LeakyRelu(self.index(a)?, slope);
        self.push(op)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let op = Op::Elu(self.index(a)?);
        self.push(op)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let op = Op::Relu(self.index(a)?);
        self.push(op)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let op = Op::Softmax(self.index(a)?, None);
        self.push(op)
    }

    pub fn masked_row_softmax(&mut self, a: Var, mask: Arc<[bool]>) -> Result<Var> {
        let op = Op::Softmax(self.index(a)?, Some(mask));
        self.push(op)
    }

    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let op = Op::OuterSum(self.index(col)?, self.index(row)?);
        self.push(op)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.index(v)).collect::<Result<_>>()?;
        self.push(Op::ConcatRows(idx))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.index(v)).collect::<Result<_>>()?;
        self.push(Op::ConcatCols(idx))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let op = Op::SliceRows(self.index(a)?, start, len);
        self.push(op)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let op = Op::SliceCols(self.index(a)?, start, len);
        self.push(op)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let op = Op::MeanRows(self.index(a)?);
        self.push(op)
    }

    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let op = Op::RepeatRows(self.index(a)?, times);
        self.push(op)
    }

    /// Cosine similarity of matching rows, as an `n × 1` column.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let op = Op::RowCosine(self.index(a)?, self.index(b)?);
        self.push(op)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let op = Op::Sum(self.index(a)?);
        self.push(op)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let count = self.value(a).len();
        if count == 0 {
            return Err(Error::Shape {
                op: "mean",
                detail: "mean of an empty matrix".into(),
            });
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / count as f64)
    }

    /// Recomputes every node from its recorded operands.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &replayed)?,
            };
            replayed.push(Node {
                value,
                op: node.op.clone(),
                param: None,
            });
        }
        Ok(replayed.into_iter().map(|n| n.value).collect())
    }

    /// Smallest |input| seen by any piecewise-linear activation; values near
    /// zero make central differences straddle a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) | Op::Relu(a) = node.op {
                for v in self.nodes[a].value.as_slice() {
                    margin = margin.min(v.abs());
                }
            }
        }
        margin
    }

    /// Adjoint of every node with respect to a scalar `loss`.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints> {
        let loss_idx = self.index(loss)?;
        if self.nodes[loss_idx].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss_idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss_idx + 1];
        grads[loss_idx] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss_idx).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let out = &node.value;
            let val = |i: usize| &self.nodes[i].value;
            let mut acc = |i: usize, g: Matrix| match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(upstream);
                    continue;
                }
                &Op::MatMul(a, b) => {
                    acc(a, matrix::matmul(&upstream, &val(b).transpose())?);
                    acc(b, matrix::matmul(&val(a).transpose(), &upstream)?);
                }
                &Op::Add(a, b) => {
                    acc(a, upstream.clone());
                    acc(b, upstream);
                }
                &Op::Sub(a, b) => {
                    acc(b, upstream.scale(-1.0));
                    acc(a, upstream);
                }
                &Op::Hadamard(a, b) => {
                    acc(a, upstream.hadamard(val(b))?);
                    acc(b, upstream.hadamard(val(a))?);
                }
                &Op::AddRow(a, row) => {
                    let mut g_row = vec![0.0; upstream.cols()];
                    for r in 0..upstream.rows() {
                        for (g, u) in g_row.iter_mut().zip(upstream.row(r)) {
                            *g += u;
                        }
                    }
                    acc(row, Matrix::row_vector(g_row));
                    acc(a, upstream);
                }
                &Op::Scale(a, s) => acc(a, upstream.scale(s)),
                &Op::Offset(a, _) => acc(a, upstream),
                &Op::ScaleBy(a, s) => {
                    let factor = val(s).as_slice()[0];
                    let g_s: f64 = upstream
                        .as_slice()
                        .iter()
                        .zip(val(a).as_slice())
                        .map(|(u, x)| u * x)
                        .sum();
                    acc(s, Matrix::scalar(g_s));
                    acc(a, upstream.scale(factor));
                }
                &Op::Transpose(a) => acc(a, upstream.transpose()),
                &Op::LeakyRelu(a, slope) => {
                    let x = val(a);
                    let g = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                        let d = if x.get(r, c) >= 0.0 { 1.0 } else { slope };
                        d * upstream.get(r, c)
                    });
                    acc(a, g);
                }
                &Op::Elu(a) => {
                    let x = val(a);
                    let g = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                        let d = if x.get(r, c) > 0.0 { 1.0 } else { out.get(r, c) + 1.0 };
                        d * upstream.get(r, c)
                    });
                    acc(a, g);
                }
                &Op::Relu(a) => {
                    let x = val(a);
                    let g = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                        if x.get(r, c) > 0.0 {
                            upstream.get(r, c)
                        } else {
                            0.0
                        }
                    });
                    acc(a, g);
                }
                Op::Softmax(a, _) => {
                    let mut g = Matrix::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let u = upstream.row(r);
                        let dot: f64 = y.iter().zip(u).map(|(y, u)| y * u).sum();
                        for (gv, (y, u)) in g.row_mut(r).iter_mut().zip(y.iter().zip(u)) {
                            *gv = y * (u - dot);
                        }
                    }
                    acc(*a, g);
                }
                &Op::OuterSum(col, row) => {
                    let mut g_col = vec![0.0; upstream.rows()];
                    let mut g_row = vec![0.0; upstream.cols()];
                    for (r, gc) in g_col.iter_mut().enumerate() {
                        for (c, u) in upstream.row(r).iter().enumerate() {
                            *gc += u;
                            g_row[c] += u;
                        }
                    }
                    acc(col, Matrix::new(g_col.len(), 1, g_col)?);
                    acc(row, Matrix::row_vector(g_row));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        acc(p, slice_rows(&upstream, start, rows)?);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let cols = val(p).cols();
                        acc(p, slice_cols(&upstream, start, cols)?);
                        start += cols;
                    }
                }
                &Op::SliceRows(a, start, len) => {
                    let src = val(a);
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..len {
                        g.row_mut(start + r).copy_from_slice(upstream.row(r));
                    }
                    acc(a, g);
                }
                &Op::SliceCols(a, start, len) => {
                    let src = val(a);
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        g.row_mut(r)[start..start + len].copy_from_slice(upstream.row(r));
                    }
                    acc(a, g);
                }
                &Op::MeanRows(a) => {
                    let src = val(a);
                    let inv = 1.0 / src.rows() as f64;
                    let g = Matrix::from_fn(src.rows(), src.cols(), |_, c| upstream.get(0, c) * inv);
                    acc(a, g);
                }
                &Op::RepeatRows(a, _) => {
                    let mut g_row = vec![0.0; upstream.cols()];
                    for r in 0..upstream.rows() {
                        for (g, u) in g_row.iter_mut().zip(upstream.row(r)) {
                            *g += u;
                        }
                    }
                    acc(a, Matrix::row_vector(g_row));
                }
                &Op::RowCosine(a, b) => {
                    let (x, y) = (val(a), val(b));
                    let mut gx = Matrix::zeros(x.rows(), x.cols());
                    let mut gy = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..x.rows() {
                        let (xr, yr) = (x.row(r), y.row(r));
                        let nx = norm(xr);
                        let ny = norm(yr);
                        let cos = out.get(r, 0);
                        let u = upstream.get(r, 0);
                        for c in 0..xr.len() {
                            gx.row_mut(r)[c] = u * (yr[c] / (nx * ny) - cos * xr[c] / (nx * nx));
                            gy.row_mut(r)[c] = u * (xr[c] / (nx * ny) - cos * yr[c] / (ny * ny));
                        }
                    }
                    acc(a, gx);
                    acc(b, gy);
                }
                &Op::Sum(a) => {
                    let src = val(a);
                    acc(a, Matrix::filled(src.rows(), src.cols(), upstream.get(0, 0)));
                }
            }
        }
        Ok(Adjoints { tape: self.id, grads })
    }

    /// Gradients of `loss` for every registered parameter. Parameters the
    /// loss does not depend on get a zero matrix.
    pub fn backward(&self, loss: Var) -> Result<GradientSet> {
        let adjoints = self.adjoints(loss)?;
        let mut out = GradientSet::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = adjoints
                    .grads
                    .get(idx)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }
}

/// Per-node adjoints from one backward sweep.
pub struct Adjoints {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Gradient with respect to `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_finite(op: &str, m: &Matrix) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::Numeric(format!("{op} produced a non-finite value")));
    }
    Ok(())
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Hadamard(..) => "hadamard",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Offset(..) => "offset",
        Op::ScaleBy(..) => "scale_by",
        Op::Transpose(..) => "transpose",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Elu(..) => "elu",
        Op::Relu(..) => "relu",
        Op::Softmax(..) => "row_softmax",
        Op::OuterSum(..) => "outer_sum",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::MeanRows(..) => "mean_rows",
        Op::RepeatRows(..) => "repeat_rows",
        Op::RowCosine(..) => "row_cosine",
        Op::Sum(..) => "sum",
    }
}

fn slice_rows(m: &Matrix, start: usize, len: usize) -> Result<Matrix> {
    if start + len > m.rows() {
        return Err(Error::Shape {
            op: "slice_rows",
            detail: format!("rows {start}..{} of {}", start + len, m.rows()),
        });
    }
    Matrix::new(len, m.cols(), m.as_slice()[start * m.cols()..(start + len) * m.cols()].to_vec())
}

fn slice_cols(m: &Matrix, start: usize, len: usize) -> Result<Matrix> {
    if start + len > m.cols() {
        return Err(Error::Shape {
            op: "slice_cols",
            detail: format!("cols {start}..{} of {}", start + len, m.cols()),
        });
    }
    Ok(Matrix::from_fn(m.rows(), len, |r, c| m.get(r, start + c)))
}

/// Forward kernel shared by recording and replay.
fn eval(op: &Op, nodes: &[Node]) -> Result<Matrix> {
    let val = |i: usize| &nodes[i].value;
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        &Op::MatMul(a, b) => matrix::matmul(val(a), val(b))?,
        &Op::Add(a, b) => val(a).add(val(b))?,
        &Op::Sub(a, b) => val(a).sub(val(b))?,
        &Op::Hadamard(a, b) => val(a).hadamard(val(b))?,
        &Op::AddRow(a, row) => {
            let (x, r) = (val(a), val(row));
            if r.rows() != 1 || r.cols() != x.cols() {
                return Err(Error::Dimension {
                    op: "add_row",
                    left: x.shape(),
                    right: r.shape(),
                });
            }
            Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + r.get(0, j))
        }
        &Op::Scale(a, s) => val(a).scale(s),
        &Op::Offset(a, c) => val(a).map(|v| v + c),
        &Op::ScaleBy(a, s) => {
            let s = val(s);
            if s.shape() != (1, 1) {
                return Err(Error::Dimension {
                    op: "scale_by",
                    left: val(a).shape(),
                    right: s.shape(),
                });
            }
            val(a).scale(s.get(0, 0))
        }
        &Op::Transpose(a) => val(a).transpose(),
        &Op::LeakyRelu(a, slope) => matrix::leaky_relu(val(a), slope)?,
        &Op::Elu(a) => matrix::elu(val(a)),
        &Op::Relu(a) => val(a).map(|v| v.max(0.0)),
        Op::Softmax(a, mask) => matrix::masked_row_softmax(val(*a), mask.as_deref())?,
        &Op::OuterSum(col, row) => {
            let (c, r) = (val(col), val(row));
            if c.cols() != 1 || r.rows() != 1 {
                return Err(Error::Dimension {
                    op: "outer_sum",
                    left: c.shape(),
                    right: r.shape(),
                });
            }
            Matrix::from_fn(c.rows(), r.cols(), |i, j| c.get(i, 0) + r.get(0, j))
        }
        Op::ConcatRows(parts) => {
            let cols = parts.first().map_or(0, |&p| val(p).cols());
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let m = val(p);
                if m.cols() != cols {
                    return Err(Error::Dimension {
                        op: "concat_rows",
                        left: val(parts[0]).shape(),
                        right: m.shape(),
                    });
                }
                rows += m.rows();
                data.extend_from_slice(m.as_slice());
            }
            Matrix::new(rows, cols, data)?
        }
        Op::ConcatCols(parts) => {
            let rows = parts.first().map_or(0, |&p| val(p).rows());
            for &p in parts {
                if val(p).rows() != rows {
                    return Err(Error::Dimension {
                        op: "concat_cols",
                        left: val(parts[0]).shape(),
                        right: val(p).shape(),
                    });
                }
            }
            let cols: usize = parts.iter().map(|&p| val(p).cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(val(p).row(r));
                }
            }
            Matrix::new(rows, cols, data)?
        }
        &Op::SliceRows(a, start, len) => slice_rows(val(a), start, len)?,
        &Op::SliceCols(a, start, len) => slice_cols(val(a), start, len)?,
        &Op::MeanRows(a) => val(a).mean_rows()?,
        &Op::RepeatRows(a, times) => {
            let m = val(a);
            if m.rows() != 1 {
                return Err(Error::Shape {
                    op: "repeat_rows",
                    detail: format!("expected a single row, got {}", m.rows()),
                });
            }
            Matrix::from_fn(times, m.cols(), |_, c| m.get(0, c))
        }
        &Op::RowCosine(a, b) => {
            let (x, y) = (val(a), val(b));
            same_shape("row_cosine", x, y)?;
            let mut out = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                out.push(matrix::cosine(x.row(r), y.row(r))?);
            }
            Matrix::new(x.rows(), 1, out)?
        }
        &Op::Sum(a) => Matrix::scalar(val(a).as_slice().iter().sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, salt: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| ((r * 7 + c * 3) as f64 * 0.37 + salt).sin())
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param("x", sample(3, 2, 0.1)).unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["x"], Matrix::ones(3, 2));
    }

    #[test]
    fn gradient_of_quadratic_is_twice_x() {
        let x0 = Matrix::new(3, 1, vec![1.5, -2.0, 0.25]).unwrap();
        let mut tape = Tape::new();
        let x = tape.param("x", x0.clone()).unwrap();
        let xt = tape.transpose(x).unwrap();
        let loss = tape.matmul(xt, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["x"], x0.scale(2.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", sample(2, 2, 0.0)).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param("x", Matrix::scalar(1.0)).unwrap();
        let _ = b.param("y", Matrix::scalar(2.0)).unwrap();
        assert!(matches!(b.backward(x), Err(Error::Contract(_))));
        assert!(b.sum(x).is_err());
    }

    #[test]
    fn duplicate_parameter_names_are_rejected() {
        let mut tape = Tape::new();
        tape.param("w", Matrix::scalar(1.0)).unwrap();
        assert!(tape.param("w", Matrix::scalar(2.0)).is_err());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", sample(2, 2, 0.3)).unwrap();
        tape.param("unused", sample(1, 4, 0.3)).unwrap();
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads["unused"], Matrix::zeros(1, 4));
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut tape = Tape::new();
        let a = tape.param("a", sample(3, 4, 0.2)).unwrap();
        let b = tape.param("b", sample(4, 3, 0.9)).unwrap();
        let p = tape.matmul(a, b).unwrap();
        let s = tape.row_softmax(p).unwrap();
        let e = tape.elu(s).unwrap();
        let c = tape.row_cosine(e, p).unwrap();
        let _ = tape.sum(c).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, m) in replayed.iter().enumerate() {
            assert_eq!(m, &tape.nodes[i].value);
        }
    }

    #[test]
    fn dimension_errors_surface_from_ops() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::zeros(2, 3));
        let b = tape.constant(Matrix::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.add_row(a, b), Err(Error::Dimension { .. })));
    }
}
