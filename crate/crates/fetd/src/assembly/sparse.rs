//! Minimal compressed-sparse-row matrices.
//!
//! Only the operations the solver needs: triplet accumulation, matrix-vector
//! products, transposition, sparse-sparse products (for the algebraic
//! reduction), quadratic forms, and a plain-text triplet dump.  Rows keep
//! their column indices sorted, and duplicate triplets are summed, so every
//! construction path is deterministic.

use crate::error::{Error, Result};

/// Triplet accumulator for building a [`SparseMatrix`].
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    /// Accumulates `value` at `(row, col)`; duplicates are summed on build.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries
            .sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = cols.len();
        }
        // Prefix-fill rows that received no entries.
        for r in 1..=self.nrows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Compressed-sparse-row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// The stored entries of one row as `(column, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for (c, v) in self.row(r) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    /// `v^T A w`.
    pub fn quadratic(&self, v: &[f64], w: &[f64]) -> f64 {
        assert_eq!(v.len(), self.nrows);
        assert_eq!(w.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let mut row_acc = 0.0;
            for (c, x) in self.row(r) {
                row_acc += x * w[c];
            }
            acc += v[r] * row_acc;
        }
        acc
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = SparseBuilder::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                b.add(c, r, v);
            }
        }
        b.build()
    }

    /// `A B` by row-wise accumulation.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::Contract(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut b = SparseBuilder::new(self.nrows, other.ncols);
        // Dense workspace with a marker so each output entry is added once.
        let mut acc = vec![0.0f64; other.ncols];
        let mut mark = vec![false; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            for (k, v) in self.row(r) {
                for (c, w) in other.row(k) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += v * w;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                b.add(r, c, acc[c]);
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
        }
        Ok(b.build())
    }

    /// The linear combination `A + alpha B`, with the union sparsity pattern.
    pub fn add_scaled(&self, other: &SparseMatrix, alpha: f64) -> Result<SparseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Contract(format!(
                "cannot combine {}x{} with {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut b = SparseBuilder::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                b.add(r, c, v);
            }
            for (c, v) in other.row(r) {
                b.add(r, c, alpha * v);
            }
        }
        Ok(b.build())
    }

    /// Triplet dump, one `row col value` line per entry, 1-based indices.
    pub fn dump_triplets(&self) -> String {
        let mut out = String::new();
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out.push_str(&format!("{} {} {}\n", r + 1, c + 1, v));
            }
        }
        out
    }

    /// Largest absolute entry-wise difference against `other`, treating
    /// missing entries as zero.
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> f64 {
        assert_eq!(self.nrows, other.nrows);
        assert_eq!(self.ncols, other.ncols);
        let mut worst = 0.0f64;
        let mut dense_row = vec![0.0f64; self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                dense_row[c] = v;
            }
            for (c, v) in other.row(r) {
                dense_row[c] -= v;
            }
            for (c, _) in self.row(r).chain(other.row(r)) {
                worst = worst.max(dense_row[c].abs());
                dense_row[c] = 0.0;
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rng: &mut ChaCha8Rng, nrows: usize, ncols: usize, fill: f64) -> SparseMatrix {
        let mut b = SparseBuilder::new(nrows, ncols);
        for r in 0..nrows {
            for c in 0..ncols {
                if rng.gen::<f64>() < fill {
                    b.add(r, c, rng.gen::<f64>() - 0.5);
                }
            }
        }
        b.build()
    }

    fn to_dense(a: &SparseMatrix) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; a.ncols()]; a.nrows()];
        for r in 0..a.nrows() {
            for (c, v) in a.row(r) {
                d[r][c] += v;
            }
        }
        d
    }

    #[test]
    fn duplicates_are_summed_and_rows_sorted() {
        let mut b = SparseBuilder::new(2, 3);
        b.add(1, 2, 1.0);
        b.add(0, 1, 2.0);
        b.add(1, 0, 3.0);
        b.add(1, 2, 0.5);
        let a = b.build();
        assert_eq!(a.nnz(), 3);
        let row1: Vec<_> = a.row(1).collect();
        assert_eq!(row1, vec![(0, 3.0), (2, 1.5)]);
        assert_eq!(a.row(0).collect::<Vec<_>>(), vec![(1, 2.0)]);
    }

    #[test]
    fn empty_rows_are_handled() {
        let mut b = SparseBuilder::new(4, 4);
        b.add(2, 2, 5.0);
        let a = b.build();
        assert_eq!(a.apply(&[1.0, 1.0, 1.0, 1.0]), vec![0.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn matvec_transpose_and_quadratic_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let a = random_sparse(&mut rng, m, n, 0.4);
            let d = to_dense(&a);
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5).collect();

            let y = a.apply(&x);
            for r in 0..m {
                let want: f64 = (0..n).map(|c| d[r][c] * x[c]).sum();
                assert!((y[r] - want).abs() < 1e-13);
            }

            let want_q: f64 = (0..m)
                .map(|r| v[r] * (0..n).map(|c| d[r][c] * x[c]).sum::<f64>())
                .sum();
            assert!((a.quadratic(&v, &x) - want_q).abs() < 1e-13);

            let t = a.transpose();
            let dt = to_dense(&t);
            for r in 0..m {
                for c in 0..n {
                    assert_eq!(d[r][c], dt[c][r]);
                }
            }
        }
    }

    #[test]
    fn matmul_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, k, n) = (
                rng.gen_range(1..7),
                rng.gen_range(1..7),
                rng.gen_range(1..7),
            );
            let a = random_sparse(&mut rng, m, k, 0.5);
            let b = random_sparse(&mut rng, k, n, 0.5);
            let c = a.matmul(&b).unwrap();
            let (da, db, dc) = (to_dense(&a), to_dense(&b), to_dense(&c));
            for r in 0..m {
                for s in 0..n {
                    let want: f64 = (0..k).map(|j| da[r][j] * db[j][s]).sum();
                    assert!((dc[r][s] - want).abs() < 1e-13);
                }
            }
        }
        let a = random_sparse(&mut rng, 3, 4, 0.5);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn add_scaled_matches_dense_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let a = random_sparse(&mut rng, m, n, 0.4);
            let b = random_sparse(&mut rng, m, n, 0.4);
            let alpha = rng.gen::<f64>() - 0.5;
            let c = a.add_scaled(&b, alpha).unwrap();
            let (da, db, dc) = (to_dense(&a), to_dense(&b), to_dense(&c));
            for r in 0..m {
                for s in 0..n {
                    assert!((dc[r][s] - (da[r][s] + alpha * db[r][s])).abs() < 1e-13);
                }
            }
        }
        let a = random_sparse(&mut rng, 2, 3, 0.5);
        let b = random_sparse(&mut rng, 3, 2, 0.5);
        assert!(a.add_scaled(&b, 1.0).is_err());
    }

    #[test]
    fn triplet_dump_is_one_based_and_row_major() {
        let mut b = SparseBuilder::new(2, 2);
        b.add(0, 0, 1.5);
        b.add(1, 1, -2.0);
        b.add(0, 1, 0.25);
        assert_eq!(b.build().dump_triplets(), "1 1 1.5\n1 2 0.25\n2 2 -2\n");
    }

    #[test]
    fn max_abs_diff_sees_structural_differences() {
        let mut b1 = SparseBuilder::new(2, 2);
        b1.add(0, 0, 1.0);
        let a1 = b1.build();
        let mut b2 = SparseBuilder::new(2, 2);
        b2.add(1, 1, 0.5);
        let a2 = b2.build();
        assert_eq!(a1.max_abs_diff(&a2), 1.0);
        assert_eq!(a1.max_abs_diff(&a1), 0.0);
    }
}
