//! Minimal row-major matrix used by the network and fusion layers.
//!
//! This is deliberately not a linear-algebra library: the networks here are
//! small dense stacks, and the training loop only needs shaped storage,
//! row access, and a couple of products written out explicitly.

use serde::{Deserialize, Serialize};

use crate::num::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Wraps `data` (length must be `rows * cols`) without copying.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Mat::from_vec: {} values cannot fill {rows}x{cols}",
            data.len()
        );
        Self { rows, cols, data }
    }

    /// Builds from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n_cols, "Mat::from_rows: row {i} has ragged width");
            data.extend_from_slice(row);
        }
        Self {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        debug_assert!(i < self.rows);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Copies column `j` out as a vector.
    pub fn column(&self, j: usize) -> Vec<T> {
        assert!(j < self.cols, "column {j} out of range for {} cols", self.cols);
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `self * other^T`, i.e. `(n, k) x (m, k) -> (n, m)`. This is the shape
    /// a forward pass wants when weights are stored one row per output unit.
    pub fn matmul_transposed(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(
            self.cols, other.cols,
            "matmul_transposed: inner dimensions {} vs {} differ",
            self.cols, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let lhs = self.row(i);
            for j in 0..other.rows {
                let rhs = other.row(j);
                let mut acc = T::zero();
                for (a, b) in lhs.iter().zip(rhs) {
                    acc = acc + *a * *b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Applies `f` to every element in place.
    pub fn map_in_place(&mut self, mut f: impl FnMut(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Concatenates two matrices with equal row counts side by side.
    pub fn hcat(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.rows, other.rows, "hcat: row counts differ");
        let mut out = Mat::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    /// Returns the row range `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Mat<T> {
        assert!(start <= end && end <= self.rows, "slice_rows: bad range");
        Mat {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Gathers the given rows (in order, repeats allowed) into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Mat<T> {
        let mut out = Mat::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Returns the column range `[start, end)` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Mat<T> {
        assert!(start <= end && end <= self.cols, "slice_cols: bad range");
        let mut out = Mat::zeros(self.rows, end - start);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..end]);
        }
        out
    }
}
