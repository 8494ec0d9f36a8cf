//! Compressed sparse-column storage.

use super::NumError;

/// Real matrix in compressed sparse-column form.
///
/// Row indices are strictly increasing within each column and no explicit
/// zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Assemble from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that cancel to exactly zero are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, NumError> {
        if nrows == 0 || ncols == 0 {
            return Err(NumError::EmptyMatrix);
        }
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(NumError::IndexOutOfRange {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[next[c]] = (r, v);
            next[c] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        for c in 0..ncols {
            let col = &mut entries[counts[c]..counts[c + 1]];
            col.sort_by_key(|&(r, _)| r);
            let mut i = 0;
            while i < col.len() {
                let r = col[i].0;
                let mut sum = 0.0;
                while i < col.len() && col[i].0 == r {
                    sum += col[i].1;
                    i += 1;
                }
                if sum != 0.0 {
                    row_idx.push(r);
                    values.push(sum);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Build directly from CSC arrays, validating the canonical-form invariants.
    pub fn from_csc(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, NumError> {
        if nrows == 0 || ncols == 0 {
            return Err(NumError::EmptyMatrix);
        }
        let malformed = col_ptr.len() != ncols + 1
            || col_ptr[0] != 0
            || col_ptr[ncols] != row_idx.len()
            || row_idx.len() != values.len()
            || col_ptr.windows(2).any(|w| w[0] > w[1]);
        if malformed {
            return Err(NumError::MalformedCsc);
        }
        for c in 0..ncols {
            let rows = &row_idx[col_ptr[c]..col_ptr[c + 1]];
            if rows.iter().any(|&r| r >= nrows) || rows.windows(2).any(|w| w[0] >= w[1]) {
                return Err(NumError::MalformedCsc);
            }
        }
        if values.iter().any(|&v| v == 0.0) {
            return Err(NumError::MalformedCsc);
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Result<Self, NumError> {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, NumError> {
        let n = diag.len();
        let trips: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(n, n, &trips)
    }

    /// All-zero matrix (no stored entries).
    pub fn zeros(nrows: usize, ncols: usize) -> Result<Self, NumError> {
        Self::from_triplets(nrows, ncols, &[])
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

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row indices and values of column `c`.
    pub fn column(&self, c: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[c]..self.col_ptr[c + 1];
        (&self.row_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (rows, vals) = self.column(c);
        match rows.binary_search(&r) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for c in 0..self.ncols {
            let (rows, vals) = self.column(c);
            out.extend(rows.iter().zip(vals).map(|(&r, &v)| (r, c, v)));
        }
        out
    }

    /// Largest absolute entry (0 for an empty pattern).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `y = self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = self * x`, overwriting `y`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "sparse matvec: operand length");
        assert_eq!(y.len(), self.nrows, "sparse matvec: output length");
        y.fill(0.0);
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            let (rows, vals) = self.column(c);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * xc;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let trips: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &trips).expect("transpose keeps valid indices")
    }

    /// `alpha * self + beta * other` for matrices of equal shape.
    pub fn linear_combination(
        &self,
        alpha: f64,
        other: &Self,
        beta: f64,
    ) -> Result<Self, NumError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(NumError::DimensionMismatch {
                expected: self.nrows * self.ncols,
                actual: other.nrows * other.ncols,
            });
        }
        let mut trips: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (r, c, alpha * v))
            .collect();
        trips.extend(
            other
                .triplets()
                .into_iter()
                .map(|(r, c, v)| (r, c, beta * v)),
        );
        Self::from_triplets(self.nrows, self.ncols, &trips)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Symmetric permutation `P A Pᵀ` where `perm[new] = old`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Self {
        assert!(self.is_square() && perm.len() == self.nrows);
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let trips: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (inv[r], inv[c], v))
            .collect();
        Self::from_triplets(self.nrows, self.ncols, &trips)
            .expect("permutation keeps valid indices")
    }

    /// Columns `cols` of `self` as a new matrix, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self, NumError> {
        let mut trips = Vec::new();
        for (new_c, &c) in cols.iter().enumerate() {
            if c >= self.ncols {
                return Err(NumError::IndexOutOfRange {
                    row: 0,
                    col: c,
                    nrows: self.nrows,
                    ncols: self.ncols,
                });
            }
            let (rows, vals) = self.column(c);
            trips.extend(rows.iter().zip(vals).map(|(&r, &v)| (r, new_c, v)));
        }
        Self::from_triplets(self.nrows, cols.len().max(1), &trips)
    }

    /// True when every off-diagonal pair satisfies `|a_ij - a_ji| <= tol * max|A|`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.triplets()
            .into_iter()
            .all(|(r, c, v)| (v - self.get(c, r)).abs() <= tol * scale)
    }

    /// True when only diagonal entries are stored.
    pub fn is_diagonal(&self) -> bool {
        self.triplets().into_iter().all(|(r, c, _)| r == c)
    }
}
