//! Finite-difference gradient verification harness.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, Tape};

/// Compares the tape's analytic gradient against central finite differences.
///
/// `f` builds a scalar-valued graph from a single leaf; it is re-run at
/// perturbed points, so it must be a pure function of the leaf value.
/// Returns the maximum over coordinates of
/// `|analytic - central difference| / max(1, |analytic|)`.
///
/// Points must sit away from non-differentiable kinks (ReLU at 0, the log
/// clamp floor); the check is meaningless on them and they are excluded by
/// the callers, not handled here.
pub fn gradient_check<F>(f: F, point: &Matrix, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::contract("gradient_check requires eps > 0"));
    }

    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let root = f(&mut tape, x)?;
    if tape.value(root).rows() != 1 || tape.value(root).cols() != 1 {
        return Err(Error::contract(
            "gradient_check requires a scalar-valued function",
        ));
    }
    tape.backward(root)?;
    let analytic = tape
        .grad(x)
        .expect("param leaf always carries a gradient")
        .clone();

    let eval = |data: &[f64]| -> Result<f64> {
        let m = Matrix::from_raw(point.rows(), point.cols(), data.to_vec());
        let mut t = Tape::new();
        let leaf = t.param(m);
        let r = f(&mut t, leaf)?;
        Ok(t.value(r).get(0, 0))
    };

    let mut max_rel = 0.0_f64;
    let mut work = point.data().to_vec();
    for idx in 0..work.len() {
        let orig = work[idx];
        work[idx] = orig + eps;
        let plus = eval(&work)?;
        work[idx] = orig - eps;
        let minus = eval(&work)?;
        work[idx] = orig;

        let fd = (plus - minus) / (2.0 * eps);
        let a = analytic.data()[idx];
        let rel = (a - fd).abs() / a.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient_is_tight() {
        // f(x) = x^T A x built as sum(x .* (A x)).
        let a = Matrix::from_rows(vec![
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, -0.3],
            vec![0.0, -0.3, 1.5],
        ])
        .unwrap();
        let x = Matrix::from_rows(vec![vec![0.7], vec![-0.2], vec![0.4]]).unwrap();
        let err = gradient_check(
            |t, leaf| {
                let a = t.constant(a.clone());
                let ax = t.matmul(a, leaf)?;
                let quad = t.mul(leaf, ax)?;
                Ok(t.sum(quad))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn linear_function_gradient_is_near_exact() {
        let x = Matrix::from_rows(vec![vec![1.0, -2.0, 3.0]]).unwrap();
        let err = gradient_check(|t, leaf| Ok(t.sum(leaf)), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn relu_away_from_kink_passes() {
        // Entries with |x| > 1e-3; the kink at 0 is excluded by contract.
        let x = Matrix::from_rows(vec![vec![0.5, -0.8, 1.2, -0.01]]).unwrap();
        let err = gradient_check(
            |t, leaf| {
                let r = t.relu(leaf);
                Ok(t.sum(r))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Matrix::scalar(1.0);
        assert!(gradient_check(|t, leaf| Ok(t.sum(leaf)), &x, 0.0).is_err());
    }
}
