//! Compressed sparse column storage for the assembled blocks.

use faer::sparse::{SparseColMat, SymbolicSparseColMat};

/// CSC matrix with sorted row indices and no duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Collects `(row, col, value)` contributions.
///
/// Duplicates are summed in insertion order, so assembling the same local
/// contributions in the same order always yields the same bits, and `(i, j)`
/// and `(j, i)` of a symmetric assembly receive identical sums.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        // stable: equal keys keep insertion order
        self.entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, col_ptr, row_idx, values }
    }
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column `c` as `(row, value)`.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        match self.row_idx[range.clone()].binary_search(&row) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    /// `y = A^T x`
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols).map(|c| self.column(c).map(|(r, v)| v * x[r]).sum()).collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for (r, c, v) in self.iter() {
            b.push(c, r, v);
        }
        b.build()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] = v;
        }
        d
    }

    pub(crate) fn to_faer(&self) -> SparseColMat<usize, f64> {
        let symbolic =
            SymbolicSparseColMat::new_checked(self.nrows, self.ncols, self.col_ptr.clone(), None, self.row_idx.clone());
        SparseColMat::new(symbolic, self.values.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 3);
        b.push(1, 2, 1.0);
        b.push(0, 0, 2.0);
        b.push(1, 2, 0.5);
        let m = b.build();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 2.0]), vec![2.0, 3.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 1.0]), vec![2.0, 0.0, 1.5]);
        assert_eq!(m.transpose().get(2, 1), 1.5);
    }
}
