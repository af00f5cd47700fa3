//! Dense row-major `f64` matrices and the forward kernels used by the tape.

use crate::error::{Error, Result};

/// Slope used for every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Dense row-major binary64 matrix. Zero-sized dimensions are allowed
/// (an empty relation set is a `0 × d` matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                detail: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// A `1 × len` row vector.
    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    /// Builds a matrix from row slices; `cols` is needed to shape empty inputs.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    detail: format!("row {i} has {} entries, expected {cols}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 × 1` matrix.
    pub fn to_scalar(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "to_scalar",
                detail: format!("expected 1x1, got {}x{}", self.rows, self.cols),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip("hadamard", other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn zip(&self, op: &'static str, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        same_shape(op, self, other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(&self) -> Result<Matrix> {
        if self.rows == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                detail: "no rows to average".into(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(Matrix::row_vector(out))
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// Numerically stable softmax of every row.
pub fn row_softmax(m: &Matrix) -> Result<Matrix> {
    masked_row_softmax(m, None)
}

/// Row softmax restricted to entries where `mask` is true; masked entries
/// get probability zero. Every row must keep at least one entry.
pub fn masked_row_softmax(m: &Matrix, mask: Option<&[bool]>) -> Result<Matrix> {
    if m.is_empty() {
        return Err(Error::Shape {
            op: "row_softmax",
            detail: format!("empty {}x{} matrix", m.rows, m.cols),
        });
    }
    if let Some(mask) = mask {
        if mask.len() != m.len() {
            return Err(Error::Shape {
                op: "row_softmax",
                detail: format!("mask has {} entries for {} values", mask.len(), m.len()),
            });
        }
    }
    let keep = |idx: usize| mask.is_none_or(|mk| mk[idx]);
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let base = r * m.cols;
        let mut max = f64::NEG_INFINITY;
        for c in 0..m.cols {
            if keep(base + c) {
                max = max.max(m.data[base + c]);
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::Contract(format!("softmax row {r} has no unmasked entries")));
        }
        let mut total = 0.0;
        for c in 0..m.cols {
            if keep(base + c) {
                let e = (m.data[base + c] - max).exp();
                out.data[base + c] = e;
                total += e;
            }
        }
        let inv = 1.0 / total;
        for v in &mut out.data[base..base + m.cols] {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Elementwise `x` for `x >= 0`, `slope * x` otherwise.
pub fn leaky_relu(m: &Matrix, slope: f64) -> Result<Matrix> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Contract(format!("leaky slope {slope} outside (0, 1)")));
    }
    Ok(m.map(|x| if x >= 0.0 { x } else { slope * x }))
}

/// Elementwise ELU with unit scale.
pub fn elu(m: &Matrix) -> Matrix {
    m.map(|x| if x > 0.0 { x } else { x.exp_m1() })
}

/// Cosine similarity of two equal-length vectors; zero norms are an error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        assert_eq!(matmul(&Matrix::identity(3), &a).unwrap(), a);
        assert_eq!(matmul(&Matrix::zeros(3, 3), &a).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn matmul_small_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], 2).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]], 1).unwrap();
        let expected = naive_matmul(&a, &b);
        assert_eq!(expected.as_slice(), &[17.0, 39.0]);
        assert_eq!(matmul(&a, &b).unwrap(), expected);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Dimension { left: (2, 3), right: (2, 3), .. }));
    }

    #[test]
    fn softmax_examples() {
        let s = row_softmax(&Matrix::row_vector(vec![0.0; 3])).unwrap();
        for v in s.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = row_softmax(&Matrix::scalar(-42.0)).unwrap();
        assert_eq!(s.as_slice(), &[1.0]);
        let s = row_softmax(&Matrix::row_vector(vec![2f64.ln(), 0.0])).unwrap();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = row_softmax(&Matrix::row_vector(vec![1000.0, 999.0])).unwrap();
        assert!(s.is_finite());
        assert!((s.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(row_softmax(&Matrix::zeros(0, 3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let m = Matrix::row_vector(vec![5.0, 1.0, 1.0]);
        let s = masked_row_softmax(&m, Some(&[false, true, true])).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.5, 0.5]);
        assert!(masked_row_softmax(&m, Some(&[false; 3])).is_err());
    }

    #[test]
    fn leaky_relu_examples() {
        let m = Matrix::row_vector(vec![3.0, 0.0, -1.0]);
        let out = leaky_relu(&m, 0.2).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 0.0, -0.2]);
        assert!(leaky_relu(&m, 1.5).is_err());
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    }
}
