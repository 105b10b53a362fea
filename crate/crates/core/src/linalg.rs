//! Small dense symmetric kernels: cyclic Jacobi eigendecomposition and
//! helpers built on it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvector signs are fixed so the first component above `1e-12` of the
/// column's max magnitude is positive.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymEigen {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "square matrix required");
    let mut a = m.clone();
    // symmetrize exactly so rounding in the input cannot bias rotations
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-16 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut col = v.column(i).clone_owned();
        orient(col.as_mut_slice());
        vectors.set_column(c, &col);
    }
    SymEigen { values, vectors }
}

/// Flips `x` so its first significant component is positive.
pub fn orient(x: &mut [f64]) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(first) = x.iter().find(|v| v.abs() > 1e-12 * max) {
        if *first < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

/// `M^{-1/2}` of a symmetric positive definite matrix. Fails with the smallest
/// eigenvalue when `min/max <= rel_floor`.
pub fn inv_sqrt(m: &DMatrix<f64>, rel_floor: f64) -> Result<DMatrix<f64>> {
    let e = sym_eigen(m);
    let max = e.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = e.values[0];
    if !(min > rel_floor * max) {
        return Err(Error::NotPositiveDefinite { smallest: min });
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        e.values.len(),
        e.values.iter().map(|l| 1.0 / l.sqrt()),
    ));
    Ok(&e.vectors * d * e.vectors.transpose())
}

/// Symmetric part `(M + M^T) / 2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
