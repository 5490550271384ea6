//! Dense row-major `f64` matrix and its CSV text format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Dense real matrix, row-major. Entries are finite once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Row-stochastic matrix with every entry `1/n`.
    pub fn uniform_stochastic(n: usize) -> Self {
        Matrix::filled(n, n, 1.0 / n as f64)
    }

    /// `perm[i]` is the column holding the 1 in row `i`.
    pub fn permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            m.data[i * n + j] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Matrix::from_vec(r, c, rows.concat())
    }

    /// Entries drawn i.i.d. from `N(0, scale²)`.
    pub fn random_normal(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng::normal(rng)).collect();
        Matrix { rows, cols, data }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    fn check_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (n, k, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[l * p..(l + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(n, p, out))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_t: {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        let (n, p) = (self.rows, other.rows);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let a = self.row(i);
            for j in 0..p {
                out[i * p + j] = dot(a, other.row(j));
            }
        }
        Ok(Matrix::from_raw(n, p, out))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "t_matmul: {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (k, n, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for l in 0..k {
            let a_row = self.row(l);
            let b_row = other.row(l);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * p..(i + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(n, p, out))
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Frobenius inner product `⟨self, other⟩ = Σ self_ij · other_ij`.
    pub fn inner(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "inner")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Largest deviation of a row sum from 1, or `None` if some entry is negative
    /// beyond `tol`.
    pub fn stochastic_defect(&self, tol: f64) -> Option<f64> {
        if self.data.iter().any(|&v| v < -tol) {
            return None;
        }
        Some(
            self.row_sums()
                .iter()
                .fold(0.0, |m: f64, s| m.max((s - 1.0).abs())),
        )
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.stochastic_defect(tol).is_some_and(|d| d <= tol)
    }

    /// Selects rows `order[0], order[1], …` and the same columns (for square matrices).
    pub fn permute_square(&self, order: &[usize]) -> Matrix {
        let n = order.len();
        let mut out = Matrix::zeros(n, n);
        for (i, &oi) in order.iter().enumerate() {
            for (j, &oj) in order.iter().enumerate() {
                out.data[i * n + j] = self.get(oi, oj);
            }
        }
        out
    }

    pub fn permute_rows(&self, order: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(order.len(), self.cols, data)
    }

    /// Parses the CSV format: one row per line, comma separated, no header.
    /// Blank lines are ignored.
    pub fn parse_csv(text: &str, source_name: &str) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: lineno + 1,
                message,
            };
            let mut count = 0;
            for field in line.split(',') {
                let field = field.trim();
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("not a number: {field:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("non-finite value {field:?}")));
                }
                data.push(v);
                count += 1;
            }
            match cols {
                None => cols = Some(count),
                Some(c) if c != count => {
                    return Err(parse_err(format!("expected {c} columns, found {count}")));
                }
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: "no rows".into(),
        })?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn read_csv(path: &Path) -> Result<Matrix> {
        let text = std::fs::read_to_string(path)?;
        Matrix::parse_csv(&text, &path.display().to_string())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Shortest decimal text that parses back to the same `f64` (at most 17
/// significant digits).
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    let mut s = String::new();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        let _ = write!(s, "{v:e}");
    } else {
        let _ = write!(s, "{v}");
    }
    s
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
