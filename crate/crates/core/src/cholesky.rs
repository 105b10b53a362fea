//! Envelope (skyline) Cholesky factorization with reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::SparseSymmetricMatrix;

/// Reverse Cuthill-McKee permutation: `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseSymmetricMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row_len(i)).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited vertex");
        let start = pseudo_peripheral(a, seed, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = a.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            for j in next {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

/// Returns BFS levels from `start` restricted to its component.
fn bfs_levels(a: &SparseSymmetricMatrix, start: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; a.dim()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for (j, _) in a.row(v) {
                if !seen[j] {
                    seen[j] = true;
                    next.push(j);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(a: &SparseSymmetricMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut v = seed;
    let mut depth = bfs_levels(a, v).len();
    loop {
        let levels = bfs_levels(a, v);
        let cand = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&u| (degree[u], u))
            .unwrap();
        let d = bfs_levels(a, cand).len();
        if d > depth {
            depth = d;
            v = cand;
        } else {
            return v;
        }
    }
}

/// Bytes needed to factor `a` under RCM ordering.
pub fn envelope_bytes(a: &SparseSymmetricMatrix) -> usize {
    let perm = reverse_cuthill_mckee(a);
    let (first, _) = envelope(a, &perm);
    let entries: usize = first.iter().enumerate().map(|(i, &f)| i - f + 1).sum();
    entries * std::mem::size_of::<f64>()
}

fn envelope(a: &SparseSymmetricMatrix, perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = a.dim();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let first = (0..n)
        .map(|i| a.row(perm[i]).map(|(j, _)| inv[j]).filter(|&j| j <= i).min().unwrap_or(i))
        .collect();
    (first, inv)
}

/// Lower-triangular envelope factor `P A P^T = L L^T`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &SparseSymmetricMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let (first, inv) = envelope(a, &perm);
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(perm[i]) {
                let jn = inv[j];
                if jn <= i {
                    data[start[i] + jn - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let (fi, si) = (first[i], start[i]);
            for j in fi..i {
                let (fj, sj) = (first[j], start[j]);
                let lo = fi.max(fj);
                let mut s = data[si + j - fi];
                let (ri, rj) = (&data[si + lo - fi..si + j - fi], &data[sj + lo - fj..sj + j - fj]);
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                data[si + j - fi] = s / data[sj + j - fj];
            }
            let row = &data[si..si + i - fi];
            let d = data[si + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 0.0) {
                return Err(Error::Factorization { row: perm[i], pivot: d });
            }
            data[si + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            n,
            perm,
            first,
            start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let (fi, si) = (self.first[i], self.start[i]);
            let row = &self.data[si..si + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, x)| l * x).sum();
            y[i] = (y[i] - s) / self.data[si + i - fi];
        }
        for i in (0..self.n).rev() {
            let (fi, si) = (self.first[i], self.start[i]);
            y[i] /= self.data[si + i - fi];
            let xi = y[i];
            for (k, l) in self.data[si..si + i - fi].iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
