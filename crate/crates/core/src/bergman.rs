//! Gram matrices, Fubini-Study pullbacks, and the Bergman endomorphism.
//!
//! For a section basis `{s_i}` and a metric `h` the Gram matrix is
//! `G_ij = <s_i, s_j> = ∫ ŝ_j† P ŝ_i ω`, linear in the first slot. An
//! `h`-orthonormal basis `t = L⁻¹ s` (with `G = L L†` the Cholesky
//! factorization) defines the pointwise density
//! `M̂(z) = Σ_a t̂_a t̂_a† = Ê (G⁻¹)ᵀ Ê†`, from which both derived
//! objects follow:
//!
//! * the Fubini-Study metric `P_s = (N / (r·V)) M̂⁻¹`, and
//! * the Bergman endomorphism `B = M̂ P`, whose trace integrates to `N`
//!   exactly under the same quadrature.
//!
//! At the reference metric the density is constant by the binomial
//! theorem and `2π B = diag(a_c + k + 1)`, which pins the calibration of
//! the expansion defect `D_k = 2πB - (k+1)·Id - iΛF`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::C64;
use crate::bundle::{BundleError, BundleSpec, SectionBasis};
use crate::grid::{GridError, QuadGrid, SPHERE_VOLUME};
use crate::linalg;
use crate::metric::{EndoField, MetricError, MetricField, curvature_contraction};
use crate::reduce::{par_map, par_sum_matrix};

#[derive(Debug, Error)]
pub enum BergmanError {
    #[error("gram matrix is not positive definite")]
    GramNotPositive,
    #[error("sections do not frame the bundle at node {node}")]
    DegenerateDensity { node: usize },
    #[error("basis has {basis} sections but the gram matrix is {gram}×{gram}")]
    DimensionMismatch { basis: usize, gram: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// Gram matrix of arbitrary per-node section tables against a metric.
/// Entry `(c, a)` of a table is component `c` of section `a`.
pub(crate) fn gram_from_tables(
    tables: &[DMatrix<C64>],
    h: &MetricField,
    grid: &QuadGrid,
) -> DMatrix<C64> {
    let n = tables[0].ncols();
    let raw = par_sum_matrix(tables.len(), n, n, |acc, q| {
        let e = &tables[q];
        let pairing = (e.adjoint() * h.value(q) * e).transpose();
        *acc += pairing.scale(grid.node(q).weight);
    });
    linalg::hermitize(&raw)
}

/// Gram matrix of a monomial section basis.
pub fn gram(
    basis: &SectionBasis,
    h: &MetricField,
    grid: &QuadGrid,
) -> Result<DMatrix<C64>, BergmanError> {
    if basis.tables().len() != grid.node_count() {
        return Err(BergmanError::Grid(GridError::NodeCountMismatch {
            field: basis.tables().len(),
            grid: grid.node_count(),
        }));
    }
    Ok(gram_from_tables(basis.tables(), h, grid))
}

/// Pointwise densities `M̂ = Ê (G⁻¹)ᵀ Ê†` of a basis with Gram matrix
/// `gram`.
pub(crate) fn density_from_tables(
    tables: &[DMatrix<C64>],
    gram: &DMatrix<C64>,
) -> Result<Vec<DMatrix<C64>>, BergmanError> {
    let l = linalg::cholesky_lower(gram).ok_or(BergmanError::GramNotPositive)?;
    // (G⁻¹)ᵀ = conj(L⁻¹)ᵀ·... computed stably from the factor.
    let inv_l = l
        .solve_lower_triangular(&DMatrix::identity(gram.nrows(), gram.ncols()))
        .expect("cholesky factor is invertible");
    let ginv_t = (inv_l.adjoint() * &inv_l).transpose();
    Ok(par_map(tables.len(), |q| {
        let e = &tables[q];
        linalg::hermitize(&(e * &ginv_t * e.adjoint()))
    }))
}

/// Fubini-Study metric of a basis: `P_s = (N/(r·V)) M̂⁻¹`.
///
/// # Errors
///
/// Fails when the Gram matrix is not positive definite, when its size
/// does not match the basis, or when the sections fail to frame the
/// bundle at some node (a base point of the induced map).
pub fn fubini_study(
    basis: &SectionBasis,
    gram: &DMatrix<C64>,
    grid: &QuadGrid,
) -> Result<MetricField, BergmanError> {
    fubini_study_from_tables(basis.tables(), gram, grid)
}

pub(crate) fn fubini_study_from_tables(
    tables: &[DMatrix<C64>],
    gram: &DMatrix<C64>,
    grid: &QuadGrid,
) -> Result<MetricField, BergmanError> {
    let n = tables[0].ncols();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(BergmanError::DimensionMismatch {
            basis: n,
            gram: gram.nrows(),
        });
    }
    if tables.len() != grid.node_count() {
        return Err(BergmanError::Grid(GridError::NodeCountMismatch {
            field: tables.len(),
            grid: grid.node_count(),
        }));
    }
    let rank = tables[0].nrows();
    let scale = n as f64 / (rank as f64 * SPHERE_VOLUME);
    let densities = density_from_tables(tables, gram)?;
    let values = densities
        .into_iter()
        .enumerate()
        .map(|(node, m)| {
            let l = linalg::cholesky_lower(&m).ok_or(BergmanError::DegenerateDensity { node })?;
            let inv_l = l
                .solve_lower_triangular(&DMatrix::identity(rank, rank))
                .expect("cholesky factor is invertible");
            Ok(linalg::hermitize(&(inv_l.adjoint() * inv_l)).scale(scale))
        })
        .collect::<Result<Vec<_>, BergmanError>>()?;
    Ok(MetricField::from_matrices_unchecked(rank, values))
}

/// Bergman endomorphism `B = M̂ P` of a metric at one quantization
/// level, in the weighted frame. Self-adjoint for `h`, with
/// `∫ tr B ω = N` exactly under the defining quadrature.
pub fn bergman_function(
    basis: &SectionBasis,
    h: &MetricField,
    grid: &QuadGrid,
) -> Result<EndoField, BergmanError> {
    let g = gram(basis, h, grid)?;
    let densities = density_from_tables(basis.tables(), &g)?;
    let values = densities
        .into_iter()
        .enumerate()
        .map(|(q, m)| m * h.value(q))
        .collect();
    Ok(EndoField::from_matrices(h.rank(), values))
}

/// Calibrated expansion defect `D_k = 2πB - (k+1)·Id - iΛF_h`, returned
/// with its sup operator norm in the metric `h`. The defect vanishes
/// identically at the reference metric and decays like `1/k` for smooth
/// metrics.
pub fn bergman_defect(
    bundle: &BundleSpec,
    level: i64,
    h: &MetricField,
    grid: &QuadGrid,
) -> Result<(EndoField, f64), BergmanError> {
    let basis = bundle.evaluate_basis(level, grid)?;
    let b = bergman_function(&basis, h, grid)?;
    let (curv, _tail) = curvature_contraction(h, bundle, grid)?;
    let r = bundle.rank();
    let shift = (level + 1) as f64;
    let values = (0..grid.node_count())
        .map(|q| {
            b.value(q).scale(std::f64::consts::TAU)
                - DMatrix::identity(r, r).scale(shift)
                - curv.value(q)
        })
        .collect();
    let defect = EndoField::from_matrices(r, values);
    let sup = h.operator_norm_sup(&defect);
    Ok((defect, sup))
}

/// Least-squares slope of `log sup` against `log level`: the measured
/// decay exponent of a defect sequence. Needs at least two positive
/// samples.
pub fn decay_exponent(levels: &[i64], sups: &[f64]) -> Option<f64> {
    if levels.len() != sups.len() || levels.len() < 2 {
        return None;
    }
    if sups.iter().any(|&s| s <= 0.0) || levels.iter().any(|&k| k <= 0) {
        return None;
    }
    let xs: Vec<f64> = levels.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = sups.iter().map(|&s| s.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
