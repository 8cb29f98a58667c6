//! Symmetric positive-definite solves: dense Cholesky and matrix-free CG.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vector::{axpy, dot, norm};

/// Systems at or below this dimension are factored densely.
pub const DENSE_DIM_LIMIT: usize = 256;

pub fn cholesky_solve(a: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NotConverged(format!("{n}x{n} system is not positive definite")))?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    Ok(x.as_slice().to_vec())
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Conjugate gradient for `A x = rhs` with `A` given as a matvec closure,
/// warm-started at `x`. Stops once `||rhs - A x|| <= tol`.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if rr.sqrt() <= tol {
            return Ok(CgOutcome {
                iterations: it,
                residual: rr.sqrt(),
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotConverged("CG hit non-positive curvature".into()));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }
    let residual = norm(&r);
    if residual <= tol {
        Ok(CgOutcome {
            iterations: max_iter,
            residual,
        })
    } else {
        Err(Error::NotConverged(format!(
            "CG residual {residual:.3e} > {tol:.3e} after {max_iter} iterations"
        )))
    }
}
