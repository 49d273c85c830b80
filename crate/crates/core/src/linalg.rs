//! Small hermitian-matrix helpers shared across the crate.
//!
//! Metrics are stored as hermitian positive definite matrices per grid
//! node. Comparing two metrics, or measuring an endomorphism in the
//! operator norm of a metric, reduces to hermitian eigenvalue problems
//! after conjugating by a Cholesky factor; the routines here package
//! those conjugations.

use nalgebra::{DMatrix, DVector};

use crate::C64;

/// Symmetrizes roundoff: `(m + m†)/2`.
pub(crate) fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).scale(0.5)
}

/// Largest entry magnitude of `m - m†`.
#[cfg(test)]
pub(crate) fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    max_entry_norm(&(m - m.adjoint()))
}

pub(crate) fn max_entry_norm(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Lower Cholesky factor `l` with `m = l·l†`, or `None` when `m` is not
/// positive definite. Pivots are visited in index order, so the factor
/// is bit-for-bit reproducible.
pub(crate) fn cholesky_lower(m: &DMatrix<C64>) -> Option<DMatrix<C64>> {
    let n = m.nrows();
    let mut l: DMatrix<C64> = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = C64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Eigenvalues of a hermitian matrix, ascending.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> DVector<f64> {
    let mut eigs = nalgebra::linalg::SymmetricEigen::new(hermitize(m)).eigenvalues;
    eigs.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Eigenvalues of `p1⁻¹·p2` for positive definite `p1`, computed as the
/// (real) spectrum of `l⁻¹·p2·l⁻†` where `p1 = l·l†`.
pub(crate) fn relative_eigenvalues(l: &DMatrix<C64>, p2: &DMatrix<C64>) -> DVector<f64> {
    let x = l
        .clone()
        .solve_lower_triangular(p2)
        .expect("cholesky factor is invertible");
    let y = l
        .clone()
        .solve_lower_triangular(&x.adjoint())
        .expect("cholesky factor is invertible");
    hermitian_eigenvalues(&y.adjoint())
}

/// Conjugates an endomorphism that is self-adjoint for the metric
/// `p = l·l†` into an ordinary hermitian matrix: `l†·a·l⁻†`.
pub(crate) fn metric_frame(l: &DMatrix<C64>, a: &DMatrix<C64>) -> DMatrix<C64> {
    let w = l
        .clone()
        .solve_lower_triangular(&(a.adjoint() * l))
        .expect("cholesky factor is invertible");
    w.adjoint()
}

/// Operator norm of `a` in the metric `p = l·l†`, valid when `a` is
/// self-adjoint for that metric: the largest eigenvalue magnitude of
/// `l†·a·l⁻†`.
pub(crate) fn metric_operator_norm(l: &DMatrix<C64>, a: &DMatrix<C64>) -> f64 {
    hermitian_eigenvalues(&metric_frame(l, a))
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample_metric() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.3, 0.4), c(0.3, -0.4), c(1.5, 0.0)])
    }

    #[test]
    fn cholesky_factor_reconstructs_the_matrix() {
        let p = sample_metric();
        let l = cholesky_lower(&p).unwrap();
        assert!(max_entry_norm(&(&l * l.adjoint() - &p)) < 1e-14);
        assert!(l[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite_input() {
        let m =
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(cholesky_lower(&m).is_none());
    }

    #[test]
    fn hermitian_eigenvalues_match_a_known_spectrum() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let m =
            DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let eigs = hermitian_eigenvalues(&m);
        assert!((eigs[0] - 1.0).abs() < 1e-14);
        assert!((eigs[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn relative_eigenvalues_of_a_metric_with_itself_are_one() {
        let p = sample_metric();
        let l = cholesky_lower(&p).unwrap();
        for lam in relative_eigenvalues(&l, &p).iter() {
            assert!((lam - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn relative_eigenvalues_see_a_scale_factor() {
        let p = sample_metric();
        let l = cholesky_lower(&p).unwrap();
        let eigs = relative_eigenvalues(&l, &(p.scale(3.0)));
        for lam in eigs.iter() {
            assert!((lam - 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn metric_norm_of_a_self_adjoint_operator() {
        let p = sample_metric();
        let l = cholesky_lower(&p).unwrap();
        // a = p⁻¹·h is self-adjoint for p whenever h is hermitian.
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(0.0, 2.0), c(0.0, -2.0), c(-1.0, 0.0)],
        );
        let a = p.clone().try_inverse().unwrap() * &h;
        let framed = metric_frame(&l, &a);
        assert!(hermitian_defect(&framed) < 1e-13);
        let norm = metric_operator_norm(&l, &a);
        // Same spectrum as l⁻¹·h·l⁻†, computable directly.
        let direct = relative_eigenvalues(&l, &h)
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        assert!((norm - direct).abs() < 1e-13);
    }
}
