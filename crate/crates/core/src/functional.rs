//! Cost functionals of Dirichlet eigenvalues.
//!
//! A [`FunctionalSpec`] combines one symmetric inner function per group,
//! `φ_i(λ_1, ..., λ_{k_i})`, with an outer function `F(φ_1, ..., φ_m)`. Inner
//! functions extend to symmetric positive definite matrices through their
//! spectrum, which is how the Gram matrices of the penalized energy enter.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Relative spread under which eigenvalues share one first derivative.
const GRADIENT_CLUSTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inner {
    /// `(Σ s_j^p)^{1/p}`, `p > 0`.
    PNorm(f64),
    /// `Π s_j`.
    Product,
    /// `Σ s_j`.
    Sum,
    /// `Σ s_j^p`, `p > 0`.
    PowerSum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outer {
    Sum,
    Product,
    /// `Σ x_i^p`, `p > 0`.
    PowerSum(f64),
    /// `(Σ x_i^p)^{1/p}`, `p > 0`.
    PNorm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub k: usize,
    pub inner: Inner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSpec {
    pub outer: Outer,
    pub groups: Vec<GroupSpec>,
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("empty argument list"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!("arguments must be positive, got {v}")));
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `(Σ s^p)^{1/p}` evaluated relative to the largest entry.
fn pnorm(values: &[f64], p: f64) -> f64 {
    let s = sorted(values);
    let max = *s.last().unwrap();
    max * s.iter().map(|v| (v / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn product_except(values: &[f64], skip: usize) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, v)| v)
        .product()
}

impl Inner {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Inner::PNorm(p) | Inner::PowerSum(p) if !(p > 0.0 && p.is_finite()) => {
                Err(Error::invalid(format!("exponent must be positive, got {p}")))
            }
            _ => Ok(()),
        }
    }

    /// `φ(s)`. Arguments are sorted first, so permutations give identical bits.
    pub fn eval(&self, values: &[f64]) -> Result<f64> {
        self.validate()?;
        check_positive(values)?;
        let s = sorted(values);
        Ok(match *self {
            Inner::PNorm(p) => pnorm(&s, p),
            Inner::Product => s.iter().product(),
            Inner::Sum => s.iter().sum(),
            Inner::PowerSum(p) => s.iter().map(|v| v.powf(p)).sum(),
        })
    }

    /// `∂_j φ(s)` for every `j`.
    pub fn grad(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        check_positive(values)?;
        Ok(match *self {
            Inner::PNorm(p) => {
                let f = pnorm(values, p);
                values.iter().map(|v| (v / f).powf(p - 1.0)).collect()
            }
            Inner::Product => (0..values.len()).map(|j| product_except(values, j)).collect(),
            Inner::Sum => vec![1.0; values.len()],
            Inner::PowerSum(p) => values.iter().map(|v| p * v.powf(p - 1.0)).collect(),
        })
    }
}

/// Shorthand for [`Inner::eval`].
pub fn phi_eval(inner: &Inner, values: &[f64]) -> Result<f64> {
    inner.eval(values)
}

fn spectrum_checked(m: &DMatrix<f64>) -> Result<crate::linalg::SymEigen> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid("square nonempty matrix required"));
    }
    let e = sym_eigen(m);
    if !(e.values[0] > 0.0) {
        return Err(Error::NotPositiveDefinite { smallest: e.values[0] });
    }
    Ok(e)
}

/// `φ(M)`: the inner function applied to the spectrum of `M`.
pub fn phi_matrix_eval(inner: &Inner, m: &DMatrix<f64>) -> Result<f64> {
    let e = spectrum_checked(m)?;
    inner.eval(&e.values)
}

/// Replaces derivatives inside each eigenvalue cluster by their mean.
fn cluster_average(values: &[f64], grads: &mut [f64], tol: f64) {
    let clusters = crate::eigensolve::cluster_indices(values, tol);
    for c in clusters {
        let mean = c.iter().map(|&i| grads[i]).sum::<f64>() / c.len() as f64;
        for i in c {
            grads[i] = mean;
        }
    }
}

/// Gradient `G` of `M ↦ φ(M)` on symmetric matrices: `G : H = d/dh φ(M + hH)`.
///
/// With `M = Q Λ Q^T` this is `Q diag(∂φ(Λ)) Q^T`; derivatives are averaged
/// within eigenvalue clusters so `G` does not depend on the basis chosen
/// inside a repeated eigenspace.
pub fn phi_matrix_grad(inner: &Inner, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = spectrum_checked(m)?;
    let mut g = inner.grad(&e.values)?;
    cluster_average(&e.values, &mut g, GRADIENT_CLUSTER_TOL);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (c, gc) in g.iter().enumerate() {
        let q = e.vectors.column(c);
        out += q * q.transpose() * *gc;
    }
    Ok((&out + out.transpose()) * 0.5)
}

impl Outer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Outer::PowerSum(p) | Outer::PNorm(p) if !(p > 0.0 && p.is_finite()) => {
                Err(Error::invalid(format!("exponent must be positive, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval_and_grad(&self, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.validate()?;
        check_positive(scores)?;
        Ok(match *self {
            Outer::Sum => (scores.iter().sum(), vec![1.0; scores.len()]),
            Outer::Product => (
                scores.iter().product(),
                (0..scores.len()).map(|i| product_except(scores, i)).collect(),
            ),
            Outer::PowerSum(p) => (
                scores.iter().map(|x| x.powf(p)).sum(),
                scores.iter().map(|x| p * x.powf(p - 1.0)).collect(),
            ),
            Outer::PNorm(p) => {
                let f = pnorm(scores, p);
                (f, scores.iter().map(|x| (x / f).powf(p - 1.0)).collect())
            }
        })
    }
}

/// `F(scores)` and `∇F(scores)`.
pub fn outer_eval_and_grad(spec: &FunctionalSpec, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != spec.groups.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.groups.len(),
            found: scores.len(),
        });
    }
    spec.outer.eval_and_grad(scores)
}

impl FunctionalSpec {
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.k).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::invalid("functional needs at least one group"));
        }
        self.outer.validate()?;
        for (i, g) in self.groups.iter().enumerate() {
            if g.k == 0 {
                return Err(Error::invalid(format!("group {i} has k = 0")));
            }
            g.inner.validate()?;
        }
        Ok(())
    }

    fn check_shape(&self, eigenvalues: &[Vec<f64>]) -> Result<()> {
        if eigenvalues.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                found: eigenvalues.len(),
            });
        }
        for (g, ev) in self.groups.iter().zip(eigenvalues) {
            if ev.len() != g.k {
                return Err(Error::DimensionMismatch {
                    expected: g.k,
                    found: ev.len(),
                });
            }
        }
        Ok(())
    }

    /// Group scores `φ_i(λ^{(i)})`.
    pub fn scores(&self, eigenvalues: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_shape(eigenvalues)?;
        self.groups
            .iter()
            .zip(eigenvalues)
            .map(|(g, ev)| g.inner.eval(ev))
            .collect()
    }

    /// The cost `F(φ_1(λ^{(1)}), ..., φ_m(λ^{(m)}))`.
    pub fn eval(&self, eigenvalues: &[Vec<f64>]) -> Result<f64> {
        let s = self.scores(eigenvalues)?;
        Ok(self.outer.eval_and_grad(&s)?.0)
    }
}

/// Free-boundary coefficients `a_{i,j} = ∂_i F(φ(λ)) · ∂_j φ_i(λ^{(i)})`.
///
/// Coefficients of equal eigenvalues within a group are made exactly equal.
pub fn extremality_coefficients(spec: &FunctionalSpec, eigenvalues: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let scores = spec.scores(eigenvalues)?;
    let (_, outer) = spec.outer.eval_and_grad(&scores)?;
    spec.groups
        .iter()
        .zip(eigenvalues)
        .zip(outer)
        .map(|((g, ev), df)| {
            let inner = equalize_ties(ev, g.inner.grad(ev)?);
            Ok(inner.into_iter().map(|d| df * d).collect())
        })
        .collect()
}

/// Averages derivatives over eigenvalues that agree to rounding.
fn equalize_ties(ev: &[f64], g: Vec<f64>) -> Vec<f64> {
    let tied = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    (0..ev.len())
        .map(|i| {
            let same: Vec<usize> = (0..ev.len()).filter(|&j| tied(ev[i], ev[j])).collect();
            same.iter().map(|&j| g[j]).sum::<f64>() / same.len() as f64
        })
        .collect()
}
