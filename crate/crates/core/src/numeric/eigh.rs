//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Used by the PCA reducer. Deterministic: the sweep order is fixed, so the
//! same input always yields the same factorization.

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Eigenvalues (descending) and matching eigenvectors (columns) of a
/// symmetric matrix.
pub fn eigh(sym: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if sym.rows() != sym.cols() {
        return Err(Error::contract("eigh requires a square matrix"));
    }
    if !sym.is_symmetric(1e-9 * (1.0 + sym.frob_norm())) {
        return Err(Error::contract("eigh requires a symmetric matrix"));
    }
    let n = sym.rows();
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);

    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m.get(i, j) * m.get(i, j);
            }
        }
        s.sqrt()
    };

    let scale = sym.frob_norm().max(1.0);
    let tol = 1e-12 * scale;
    for _sweep in 0..64 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((values, vectors))
}
