//! Smallest eigenpairs of the generalized symmetric problem `K x = λ B x`,
//! optionally with a nonnegative diagonal potential added to `K`.
//!
//! The main path is a restarted block Lanczos iteration on the shift-inverted
//! operator `K^{-1} B` (shift zero, envelope Cholesky of `K`), followed by a
//! Rayleigh-Ritz projection onto the Krylov basis. When the factor would exceed
//! the memory cap the solver falls back to LOBPCG with a Jacobi preconditioner.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cholesky::{envelope_bytes, EnvelopeCholesky};
use crate::error::{Error, Result};
use crate::linalg::{orient, sym, sym_eigen};
use crate::par;
use crate::sparse::SparseSymmetricMatrix;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Relative gap under which neighbouring eigenvalues form one cluster.
pub const CLUSTER_TOL: f64 = 1e-6;
/// Restarts without a 1% residual improvement after which the iteration is
/// considered to sit on its rounding floor.
const STALL_RESTARTS: usize = 25;
/// Largest stagnated residual that is still returned as converged.
const STALL_ACCEPT: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// B-normalized eigenvector in the coordinates of `K`.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ShiftInvertLanczos,
    Lobpcg,
}

#[derive(Debug, Clone)]
pub struct EigenReport {
    pub pairs: Vec<EigenPair>,
    pub iterations: usize,
    /// Relative residuals `‖Kx − λBx‖ / ‖Kx‖`, one per pair.
    pub residuals: Vec<f64>,
    pub method: Method,
}

impl EigenReport {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    /// Index groups of eigenvalues whose consecutive relative gap is `<= tol`.
    pub fn clusters(&self, tol: f64) -> Vec<Vec<usize>> {
        cluster_indices(&self.values(), tol)
    }
}

/// Groups sorted values into clusters at relative tolerance `tol`.
pub fn cluster_indices(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if {
                let prev = values[*c.last().unwrap()];
                (v - prev).abs() <= tol * v.abs().max(prev.abs())
            } =>
            {
                c.push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Factorization memory cap in bytes before switching to LOBPCG.
    pub memory_cap: usize,
    /// Optional warm-start vectors.
    pub start: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            memory_cap: 1 << 30,
            start: None,
            seed: 0x5eed,
        }
    }
}

/// `k` smallest eigenpairs of `(K + diag(potential ∘ rowsum(B))) x = λ B x`.
pub fn smallest_eigenpairs(
    stiffness: &SparseSymmetricMatrix,
    mass: &SparseSymmetricMatrix,
    k: usize,
    potential: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<EigenReport> {
    let shift = match potential {
        Some(v) => {
            if v.len() != stiffness.dim() {
                return Err(Error::DimensionMismatch {
                    expected: stiffness.dim(),
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invalid("potential must be nonnegative"));
            }
            let w = mass.row_sums();
            Some(v.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>())
        }
        None => None,
    };
    smallest_eigenpairs_shifted(stiffness, mass, k, shift.as_deref(), opts)
}

/// `k` smallest eigenpairs of `(K + diag(shift)) x = λ B x`.
pub fn smallest_eigenpairs_shifted(
    stiffness: &SparseSymmetricMatrix,
    mass: &SparseSymmetricMatrix,
    k: usize,
    shift: Option<&[f64]>,
    opts: &EigenOptions,
) -> Result<EigenReport> {
    let n = stiffness.dim();
    if mass.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: mass.dim(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("requested {k} eigenpairs of a {n}-dimensional problem")));
    }
    let a = match shift {
        Some(d) => stiffness.add_diagonal(d)?,
        None => stiffness.clone(),
    };
    let solver = Solver::new(&a, mass, k, opts);
    let mut report = if envelope_bytes(&a) <= opts.memory_cap {
        solver.lanczos(EnvelopeCholesky::factor(&a)?)?
    } else {
        log::info!("factor exceeds memory cap; using LOBPCG");
        solver.lobpcg()?
    };
    for p in &mut report.pairs {
        orient(&mut p.vector);
    }
    Ok(report)
}

/// `x^T K x / x^T B x`.
pub fn rayleigh_quotient(
    x: &[f64],
    stiffness: &SparseSymmetricMatrix,
    mass: &SparseSymmetricMatrix,
) -> Result<f64> {
    if x.len() != stiffness.dim() || x.len() != mass.dim() {
        return Err(Error::DimensionMismatch {
            expected: stiffness.dim(),
            found: x.len(),
        });
    }
    let den = mass.bilinear(x, x);
    if !(den > 0.0) {
        return Err(Error::invalid("Rayleigh quotient of a vector with zero B-norm"));
    }
    Ok(stiffness.bilinear(x, x) / den)
}

/// B-orthonormal basis kept together with its image under `B`.
struct Basis<'a> {
    mass: &'a SparseSymmetricMatrix,
    v: Vec<Vec<f64>>,
    bv: Vec<Vec<f64>>,
}

impl<'a> Basis<'a> {
    fn new(mass: &'a SparseSymmetricMatrix) -> Self {
        Basis {
            mass,
            v: Vec::new(),
            bv: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.v.len()
    }

    /// Orthogonalizes `w` against the basis twice and appends it if it keeps
    /// a meaningful fraction of its norm. Returns whether it was accepted.
    fn push(&mut self, mut w: Vec<f64>) -> bool {
        let initial = self.mass.bilinear(&w, &w).sqrt();
        if !(initial > 0.0) {
            return false;
        }
        for _ in 0..2 {
            let coeffs = par::map_slice(&self.bv, |bv| par::dot(bv, &w));
            for (c, v) in coeffs.iter().zip(&self.v) {
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let bw = self.mass.matvec(&w);
        let nrm = par::dot(&w, &bw).sqrt();
        if !(nrm > 1e-10 * initial) {
            return false;
        }
        w.iter_mut().for_each(|x| *x /= nrm);
        self.bv.push(bw.into_iter().map(|x| x / nrm).collect());
        self.v.push(w);
        true
    }

    /// `V^T A V`.
    fn project(&self, a: &SparseSymmetricMatrix) -> DMatrix<f64> {
        let av: Vec<Vec<f64>> = par::map_slice(&self.v, |v| a.matvec(v));
        let m = self.len();
        let mut h = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let x = par::dot(&self.v[i], &av[j]);
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        sym(&h)
    }

    /// Columns `V z_c` for the first `count` columns of `z`.
    fn combine(&self, z: &DMatrix<f64>, count: usize) -> Vec<Vec<f64>> {
        let n = self.v[0].len();
        par::map_range(count, |c| {
            let mut y = vec![0.0; n];
            for (r, v) in self.v.iter().enumerate() {
                let coef = z[(r, c)];
                y.iter_mut().zip(v).for_each(|(a, b)| *a += coef * b);
            }
            y
        })
    }
}

struct Solver<'a> {
    a: &'a SparseSymmetricMatrix,
    mass: &'a SparseSymmetricMatrix,
    nev: usize,
    block: usize,
    opts: &'a EigenOptions,
}

impl<'a> Solver<'a> {
    fn new(
        a: &'a SparseSymmetricMatrix,
        mass: &'a SparseSymmetricMatrix,
        nev: usize,
        opts: &'a EigenOptions,
    ) -> Self {
        let block = (nev + 2).min(a.dim());
        Solver {
            a,
            mass,
            nev,
            block,
            opts,
        }
    }

    fn initial_block(&self, rng: &mut ChaCha8Rng) -> Basis<'a> {
        let n = self.a.dim();
        let mut basis = Basis::new(self.mass);
        if let Some(start) = &self.opts.start {
            for s in start.iter().filter(|s| s.len() == n) {
                if basis.len() < self.block {
                    basis.push(s.clone());
                }
            }
        }
        self.fill_random(&mut basis, self.block, rng);
        basis
    }

    fn fill_random(&self, basis: &mut Basis<'a>, target: usize, rng: &mut ChaCha8Rng) {
        let n = self.a.dim();
        let mut attempts = 0;
        while basis.len() < target.min(n) && attempts < 10 * n + 100 {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            basis.push(w);
            attempts += 1;
        }
    }

    /// Ritz pairs of the current basis, residual-checked for the wanted ones.
    fn ritz(&self, basis: &Basis<'a>, count: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let h = basis.project(self.a);
        let e = sym_eigen(&h);
        let count = count.min(basis.len());
        let y = basis.combine(&e.vectors, count);
        let values: Vec<f64> = e.values[..count].to_vec();
        let residuals = par::map_range(self.nev.min(count), |c| {
            let ay = self.a.matvec(&y[c]);
            let by = self.mass.matvec(&y[c]);
            let r: Vec<f64> = ay.iter().zip(&by).map(|(a, b)| a - values[c] * b).collect();
            par::norm(&r) / par::norm(&ay).max(f64::MIN_POSITIVE)
        });
        (values, y, residuals)
    }

    /// Residual level reachable in floating point for the pair `(λ, y)`,
    /// relative to `‖A y‖`.
    fn attainable(&self, value: f64, y: &[f64]) -> f64 {
        let abs_apply = |m: &SparseSymmetricMatrix| -> Vec<f64> {
            par::map_range(m.dim(), |i| m.row(i).map(|(j, v)| (v * y[j]).abs()).sum())
        };
        let (aa, ab) = (abs_apply(self.a), abs_apply(self.mass));
        let bound: Vec<f64> = aa.iter().zip(&ab).map(|(x, z)| x + value.abs() * z).collect();
        64.0 * f64::EPSILON * par::norm(&bound) / par::norm(&self.a.matvec(y)).max(f64::MIN_POSITIVE)
    }

    fn converged(&self, values: &[f64], vectors: &[Vec<f64>], residuals: &[f64]) -> bool {
        residuals
            .iter()
            .enumerate()
            .all(|(c, &r)| r <= self.opts.tol || r <= self.attainable(values[c], &vectors[c]))
    }

    fn finish(&self, values: Vec<f64>, vectors: Vec<Vec<f64>>, residuals: Vec<f64>, iterations: usize, method: Method) -> EigenReport {
        let pairs = values
            .into_iter()
            .zip(vectors)
            .take(self.nev)
            .map(|(value, mut vector)| {
                let nrm = self.mass.bilinear(&vector, &vector).sqrt();
                vector.iter_mut().for_each(|x| *x /= nrm);
                EigenPair { value, vector }
            })
            .collect();
        EigenReport {
            pairs,
            iterations,
            residuals: residuals[..self.nev].to_vec(),
            method,
        }
    }

    fn lanczos(&self, factor: EnvelopeCholesky) -> Result<EigenReport> {
        let n = self.a.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let steps = (24usize.max(3 * self.block)).div_ceil(self.block).max(2);
        let mut basis = self.initial_block(&mut rng);
        let mut last = Vec::new();
        let (mut best, mut stalled) = (f64::INFINITY, 0);

        for iter in 1..=self.opts.max_iter {
            let mut prev: Vec<usize> = (0..basis.len()).collect();
            for _ in 1..steps {
                if basis.len() >= n {
                    break;
                }
                let images: Vec<Vec<f64>> = par::map_slice(&prev, |&j| factor.solve(&basis.bv[j]));
                let mut added = Vec::new();
                for w in images {
                    if basis.len() < n && basis.push(w) {
                        added.push(basis.len() - 1);
                    }
                }
                if added.is_empty() {
                    let before = basis.len();
                    self.fill_random(&mut basis, before + self.block, &mut rng);
                    added = (before..basis.len()).collect();
                }
                prev = added;
            }
            let (values, vectors, residuals) = self.ritz(&basis, self.block);
            if self.converged(&values, &vectors, &residuals) || basis.len() >= n {
                if basis.len() >= n && !residuals.iter().all(|&r| r <= self.opts.tol.max(1e-10)) {
                    log::warn!("full-space Rayleigh-Ritz residuals {residuals:?}");
                }
                return Ok(self.finish(values, vectors, residuals, iter, Method::ShiftInvertLanczos));
            }
            let worst = residuals.iter().fold(0.0, |a: f64, &b| a.max(b));
            if worst < 0.99 * best {
                best = worst;
                stalled = 0;
            } else {
                stalled += 1;
            }
            if stalled >= STALL_RESTARTS && worst <= STALL_ACCEPT {
                log::warn!("eigensolver residuals stagnated at {residuals:?}; accepting");
                return Ok(self.finish(values, vectors, residuals, iter, Method::ShiftInvertLanczos));
            }
            last = residuals;
            basis = Basis::new(self.mass);
            for y in vectors {
                basis.push(y);
            }
            self.fill_random(&mut basis, self.block, &mut rng);
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iter,
            residuals: last,
        })
    }

    fn lobpcg(&self) -> Result<EigenReport> {
        let n = self.a.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        let diag = self.a.diagonal();
        let x0 = self.initial_block(&mut rng);
        let (mut values, mut x, _) = self.ritz(&x0, self.block);
        let mut p: Vec<Vec<f64>> = Vec::new();
        let mut last = Vec::new();

        for iter in 1..=self.opts.max_iter {
            let resid: Vec<Vec<f64>> = par::map_range(x.len(), |c| {
                let ax = self.a.matvec(&x[c]);
                let bx = self.mass.matvec(&x[c]);
                ax.iter().zip(&bx).map(|(a, b)| a - values[c] * b).collect()
            });
            let rel: Vec<f64> = (0..self.nev)
                .map(|c| par::norm(&resid[c]) / par::norm(&self.a.matvec(&x[c])).max(f64::MIN_POSITIVE))
                .collect();
            if self.converged(&values, &x, &rel) {
                return Ok(self.finish(values, x, rel, iter, Method::Lobpcg));
            }
            last = rel;

            let mut basis = Basis::new(self.mass);
            for xi in &x {
                basis.push(xi.clone());
            }
            let nx = basis.len();
            for r in &resid {
                basis.push(r.iter().zip(&diag).map(|(r, d)| r / d).collect());
            }
            for pi in &p {
                basis.push(pi.clone());
            }
            if basis.len() >= n {
                let (v, y, res) = self.ritz(&basis, self.block);
                return Ok(self.finish(v, y, res, iter, Method::Lobpcg));
            }
            let h = basis.project(self.a);
            let e = sym_eigen(&h);
            let count = self.block.min(basis.len());
            let new_x = basis.combine(&e.vectors, count);
            let mut z_tail = e.vectors.clone();
            for r in 0..nx {
                for c in 0..count {
                    z_tail[(r, c)] = 0.0;
                }
            }
            p = basis.combine(&z_tail, count);
            values = e.values[..count].to_vec();
            x = new_x;
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iter,
            residuals: last,
        })
    }
}
