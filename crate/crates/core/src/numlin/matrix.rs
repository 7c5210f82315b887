use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {p}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: n,
            cols: p,
            values,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Matrix { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
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
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                t.values[j * self.rows + i] = v;
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self · selfᵀ` (rows × rows).
    pub fn gram_rows(&self) -> Matrix {
        let n = self.rows;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            let ri = self.row(i);
            for j in 0..=i {
                let v = dot(ri, self.row(j));
                g.values[i * n + j] = v;
                g.values[j * n + i] = v;
            }
        }
        g
    }

    /// `selfᵀ · self` (cols × cols).
    pub fn gram_cols(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let grow = &mut g.values[a * p..a * p + a + 1];
                for (gv, &rb) in grow.iter_mut().zip(&r[..=a]) {
                    *gv += ra * rb;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.values[b * p + a] = g.values[a * p + b];
            }
        }
        g
    }

    /// The smaller of `self·selfᵀ` and `selfᵀ·self`; both share their nonzero spectrum.
    pub fn compact_gram(&self) -> Matrix {
        if self.rows <= self.cols {
            self.gram_rows()
        } else {
            self.gram_cols()
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
    }

    /// Adds `c · v vᵀ` to a square matrix.
    pub fn add_outer(&mut self, v: &[f64], c: f64) {
        let n = self.rows;
        debug_assert!(self.is_square() && v.len() == n);
        for i in 0..n {
            let cvi = c * v[i];
            if cvi == 0.0 {
                continue;
            }
            for (o, &vj) in self.values[i * n..(i + 1) * n].iter_mut().zip(v) {
                *o += cvi * vj;
            }
        }
    }

    /// Replaces a square matrix by `(S + Sᵀ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.values[i * n + j] + self.values[j * n + i]);
                self.values[i * n + j] = v;
                self.values[j * n + i] = v;
            }
        }
    }

    /// `vᵀ · self · v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        (0..self.rows).map(|i| v[i] * dot(self.row(i), v)).sum()
    }

    /// `tr(self · other)` for square matrices of equal size, computed as `Σ self ⊙ otherᵀ`.
    pub fn trace_product(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.transpose().shape());
        let n = self.rows;
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..self.cols {
                t += self.values[i * self.cols + j] * other.values[j * other.cols + i];
            }
        }
        t
    }

    /// Copy with rows and columns permuted: `out[(i, j)] = self[(rows[i], cols[j])]`.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Data matrix with an observation mask (`true` = observed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix {
    data: Matrix,
    mask: Vec<bool>,
}

impl MaskedMatrix {
    /// Missing entries are stored as 0 in the data so that they never leak NaNs into arithmetic.
    pub fn new(mut data: Matrix, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != data.rows() * data.cols() {
            return Err(Error::shape(format!(
                "mask of length {} does not match a {}x{} matrix",
                mask.len(),
                data.rows(),
                data.cols()
            )));
        }
        for (v, &obs) in data.values.iter_mut().zip(&mask) {
            if !obs {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::data("observed entries must be finite"));
            }
        }
        Ok(MaskedMatrix { data, mask })
    }

    pub fn fully_observed(data: Matrix) -> Result<Self> {
        let mask = vec![true; data.rows() * data.cols()];
        MaskedMatrix::new(data, mask)
    }

    /// Builds a masked matrix from values where NaN marks a missing entry.
    pub fn from_nan(data: Matrix) -> Result<Self> {
        let mask = data.as_slice().iter().map(|v| !v.is_nan()).collect();
        MaskedMatrix::new(data, mask)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols() + j]
    }

    /// Observed value, or `None` when masked out.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.is_observed(i, j).then(|| self.data[(i, j)])
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.cols()..(i + 1) * self.cols()]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn column_observed_counts(&self) -> Vec<usize> {
        let p = self.cols();
        let mut counts = vec![0; p];
        for row in self.mask.chunks(p) {
            for (c, &m) in counts.iter_mut().zip(row) {
                *c += m as usize;
            }
        }
        counts
    }

    /// Mean of each column over its observed entries (NaN for a fully missing column).
    pub fn column_means(&self) -> Vec<f64> {
        let p = self.cols();
        let mut sums = vec![0.0; p];
        for i in 0..self.rows() {
            for (j, s) in sums.iter_mut().enumerate() {
                if self.is_observed(i, j) {
                    *s += self.data[(i, j)];
                }
            }
        }
        sums.iter()
            .zip(self.column_observed_counts())
            .map(|(s, c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    /// Row-major values with NaN at missing entries.
    pub fn to_nan_matrix(&self) -> Matrix {
        let mut m = self.data.clone();
        for (v, &obs) in m.values.iter_mut().zip(&self.mask) {
            if !obs {
                *v = f64::NAN;
            }
        }
        m
    }

    pub fn select_columns(&self, keep: &[usize]) -> MaskedMatrix {
        let rows: Vec<usize> = (0..self.rows()).collect();
        let data = self.data.permuted(&rows, keep);
        let mut mask = Vec::with_capacity(self.rows() * keep.len());
        for i in 0..self.rows() {
            mask.extend(keep.iter().map(|&j| self.is_observed(i, j)));
        }
        MaskedMatrix { data, mask }
    }

    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> MaskedMatrix {
        let data = self.data.permuted(rows, cols);
        let mut mask = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            mask.extend(cols.iter().map(|&j| self.is_observed(i, j)));
        }
        MaskedMatrix { data, mask }
    }
}

/// Sum of squared differences between `a` and `b` over the entries observed in `a`.
pub fn frobenius_sq_masked(a: &MaskedMatrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "masked matrix is {:?} but comparison matrix is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(&a.mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (x - y) * (x - y))
        .sum())
}
