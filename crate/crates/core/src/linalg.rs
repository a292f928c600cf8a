//! Small dense solves for the Newton-type preconditioners.

use nalgebra::{DMatrix, DVector};

pub const DAMPING_START: f64 = 1e-6;
const DAMPING_MAX: f64 = 1e12;

/// Adds `λI` to a symmetric matrix, with `λ` starting at 1e−6 and growing
/// tenfold, until the Cholesky factorization succeeds. Returns the damped
/// matrix, its factor and the `λ` used; `None` if no damping up to 1e12 works.
pub fn damp_to_pd(
    m: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = m.nrows();
    let mut lambda = DAMPING_START;
    while lambda <= DAMPING_MAX {
        let damped = m + DMatrix::<f64>::identity(n, n) * lambda;
        if let Some(chol) = damped.clone().cholesky() {
            return Some((damped, chol, lambda));
        }
        lambda *= 10.0;
    }
    None
}

/// Solves `(M + λI) x = rhs` with the smallest PD-making damping.
pub fn damped_solve(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let (_, chol, _) = damp_to_pd(m)?;
    let x = chol.solve(&DVector::from_column_slice(rhs));
    x.iter()
        .all(|v| v.is_finite())
        .then(|| x.iter().copied().collect())
}

pub fn is_symmetric_pd(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * (1.0 + m[(i, j)].abs()) {
                return false;
            }
        }
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .all(|&e| e > 0.0)
}
