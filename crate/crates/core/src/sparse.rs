//! Compressed-row symmetric sparse matrices.

use crate::error::{Error, Result};
use crate::par;

/// Symmetric matrix stored as full compressed rows (both triangles present),
/// columns sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Zero matrix with the given sorted, symmetric sparsity pattern.
    pub fn with_pattern(pattern: &[Vec<usize>]) -> Self {
        let dim = pattern.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for row in pattern {
            debug_assert!(row.windows(2).all(|w| w[0] < w[1]));
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let vals = vec![0.0; cols.len()];
        SparseSymmetricMatrix {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Builds from `(row, col, value)` entries; duplicates are summed in input order.
    pub fn from_triplets(dim: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut pattern = vec![Vec::new(); dim];
        for &(i, j, _) in entries {
            pattern[i].push(j);
        }
        for row in &mut pattern {
            row.sort_unstable();
            row.dedup();
        }
        let mut m = Self::with_pattern(&pattern);
        for &(i, j, v) in entries {
            m.add_to(i, j, v);
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        let pattern: Vec<Vec<usize>> = (0..dim).map(|i| vec![i]).collect();
        let mut m = Self::with_pattern(&pattern);
        m.vals.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// Adds `v` to entry `(i, j)`. Panics if `(i, j)` is outside the pattern.
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.vals[p])
    }

    /// Iterates `(col, value)` over row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[lo..hi].iter().copied().zip(self.vals[lo..hi].iter().copied())
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        par::map_range(self.dim, |i| self.row(i).map(|(_, v)| v).sum())
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        par::fill(y, |i| self.row(i).map(|(j, v)| v * x[j]).sum());
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.matvec_into(x, &mut y);
        y
    }

    /// `a^T A b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim);
        assert_eq!(b.len(), self.dim);
        par::sum_range(self.dim, |i| a[i] * self.row(i).map(|(j, v)| v * b[j]).sum::<f64>())
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Returns `A + diag(d)`; the diagonal must be in the pattern.
    pub fn add_diagonal(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d.len(),
            });
        }
        let mut out = self.clone();
        for (i, &di) in d.iter().enumerate() {
            match out.position(i, i) {
                Some(p) => out.vals[p] += di,
                None => return Err(Error::invalid(format!("row {i} has no diagonal entry"))),
            }
        }
        Ok(out)
    }

    /// Principal submatrix on the (sorted) index list `keep`.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.dim];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let pattern: Vec<Vec<usize>> = keep
            .iter()
            .map(|&old| {
                let mut r: Vec<usize> = self
                    .row(old)
                    .filter_map(|(j, _)| (map[j] != usize::MAX).then_some(map[j]))
                    .collect();
                r.sort_unstable();
                r
            })
            .collect();
        let mut out = Self::with_pattern(&pattern);
        for (new, &old) in keep.iter().enumerate() {
            for (j, v) in self.row(old) {
                if map[j] != usize::MAX {
                    out.add_to(new, map[j], v);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}
