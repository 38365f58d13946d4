//! Compressed sparse row storage for the assembled system matrices.
//!
//! Assembly pushes `(row, col, value)` triplets into a [`CooBuilder`]; compression
//! sorts them stably by position and sums duplicates in insertion order, so the
//! same triplet stream always produces bit-identical matrices.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Default)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn into_csr(mut self) -> CsrMatrix {
        // stable: duplicates keep insertion order, so the summation order is fixed
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }
}

/// Row-compressed matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CooBuilder::new(nrows, ncols).into_csr()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = CooBuilder::with_capacity(n, n, n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.into_csr()
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = CooBuilder::new(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    b.push(i, j, m[(i, j)]);
                }
            }
        }
        b.into_csr()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterate `(row, col, value)` over stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.indptr[row]..self.indptr[row + 1];
        match self.indices[range.clone()].binary_search(&col) {
            Ok(pos) => self.data[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.mul_vec(y))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `‖A − Aᵀ‖_max / ‖A‖_max`, zero for the zero matrix.
    pub fn symmetry_error(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let worst = self
            .triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0f64, f64::max);
        worst / scale
    }

    pub fn scale(&self, factor: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `a·self + b·other`, entrywise over the union of sparsity patterns.
    pub fn lincomb(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut builder = CooBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for (r, c, v) in self.triplets() {
            builder.push(r, c, a * v);
        }
        for (r, c, v) in other.triplets() {
            builder.push(r, c, b * v);
        }
        builder.into_csr()
    }

    /// Frobenius norm of `self − other`.
    pub fn distance(&self, other: &CsrMatrix) -> f64 {
        self.lincomb(1.0, other, -1.0).frobenius_norm()
    }

    /// Coordinate-format MatrixMarket dump (1-based indices, general real).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut b = CooBuilder::new(2, 2);
        b.push(1, 0, 1.0);
        b.push(0, 1, 2.0);
        b.push(1, 0, 0.5);
        b.push(0, 0, 3.0);
        let m = b.into_csr();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 0), 1.5);
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(m.symmetry_error() > 0.0);
    }

    #[test]
    fn lincomb_and_matvec() {
        let a = CsrMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]));
        let i = CsrMatrix::identity(2);
        let c = a.lincomb(1.0, &i, -2.0);
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(1, 1), 1.0);
        let x = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(a.mul_vec(&x), DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(a.bilinear(&x, &x), 3.0);
        assert_eq!(a.symmetry_error(), 0.0);
    }

    #[test]
    fn matrix_market_header() {
        let a = CsrMatrix::identity(3);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines.next().unwrap(), "3 3 3");
        assert!(lines.next().unwrap().starts_with("1 1 1.0"));
    }
}
