use nalgebra::{DMatrix, DVector};

/// Solves a symmetric positive (semi-)definite system.
///
/// Cholesky first, retried with a growing diagonal shift; an eigen-decomposition
/// pseudo-inverse is the last resort for numerically singular matrices.
pub(crate) fn solve_spd(mut system: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = system.nrows();
    let mut shift = 0.0;
    for _ in 0..8 {
        if let Some(chol) = system.clone().cholesky() {
            return chol.solve(b);
        }
        let bump = if shift == 0.0 { 1e-12 } else { shift * 99.0 };
        for a in 0..n {
            system[(a, a)] += bump;
        }
        shift += bump;
    }
    let eig = system.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_fn(n, |i, _| {
        let ev = eig.eigenvalues[i];
        if ev > 1e-14 * max_ev {
            proj[i] / ev
        } else {
            0.0
        }
    });
    eig.eigenvectors * scaled
}
