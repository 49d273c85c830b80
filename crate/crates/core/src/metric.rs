//! Hermitian metrics on the bundle and their curvature.
//!
//! A metric is stored per grid node in the weighted frame: the matrix
//! `P = Δ H Δ` with `Δ = diag((1+|z|²)^{a_c/2})` and `H` the chart-frame
//! metric. `P` is hermitian positive definite, bounded on the whole
//! sphere, and equals the identity exactly for the reference metric
//! built from the standard line-bundle metrics. Endomorphism-valued
//! fields live in the same frame, where traces, eigenvalues, and
//! self-adjointness with respect to the metric read exactly as in the
//! chart frame.
//!
//! The mean-curvature contraction `iΛF` is computed from `P` alone: the
//! connection form in the weighted frame is `K = P⁻¹∂P - P⁻¹δP - δ`
//! with `δ = diag((a_c/2) z̄/(1+|z|²))`, and
//! `iΛF = -ρ⁻¹(∂̄K + [δ̄, K])`. Only `P` itself is differentiated
//! spectrally (`∂̄P` is the adjoint of `∂P`, and `∂̄∂P` uses the
//! one-pass mixed operator); all δ-terms are analytic. For the
//! reference metric every derivative vanishes identically and the
//! formula collapses to `iΛF = diag(a_c)` at machine precision.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::C64;
use crate::bundle::BundleSpec;
use crate::grid::{
    Direction, GridError, Node, QuadGrid, SPHERE_VOLUME, ScalarField, integrate,
    mixed_second_derivative, spectral_derivative,
};
use crate::linalg;
use crate::reduce::par_map;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric is not positive definite at node {node}")]
    NotPositiveDefinite { node: usize },
    #[error("metric rank {metric} does not match bundle rank {bundle}")]
    RankMismatch { metric: usize, bundle: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// An endomorphism-valued field in the weighted frame: one `r × r`
/// matrix per grid node.
#[derive(Debug, Clone)]
pub struct EndoField {
    rank: usize,
    values: Vec<DMatrix<C64>>,
}

impl EndoField {
    pub fn from_fn<F>(grid: &QuadGrid, rank: usize, f: F) -> Self
    where
        F: Fn(Node) -> DMatrix<C64> + Send + Sync,
    {
        let values = par_map(grid.node_count(), |i| {
            let m = f(grid.node(i));
            debug_assert_eq!((m.nrows(), m.ncols()), (rank, rank));
            m
        });
        Self { rank, values }
    }

    pub fn from_matrices(rank: usize, values: Vec<DMatrix<C64>>) -> Self {
        debug_assert!(
            values
                .iter()
                .all(|m| m.nrows() == rank && m.ncols() == rank)
        );
        Self { rank, values }
    }

    pub fn constant(grid: &QuadGrid, m: DMatrix<C64>) -> Self {
        let rank = m.nrows();
        Self {
            rank,
            values: vec![m; grid.node_count()],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, node: usize) -> &DMatrix<C64> {
        &self.values[node]
    }

    pub fn values(&self) -> &[DMatrix<C64>] {
        &self.values
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rank: self.rank,
            values,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rank: self.rank,
            values: self.values.iter().map(|m| m.scale(s)).collect(),
        }
    }

    /// Pointwise trace as a scalar field.
    pub fn trace_field(&self) -> ScalarField {
        ScalarField::from_values(self.values.iter().map(|m| m.trace()).collect())
    }

    /// Largest entry magnitude over all nodes.
    pub fn sup_abs(&self) -> f64 {
        self.values
            .iter()
            .map(linalg::max_entry_norm)
            .fold(0.0, f64::max)
    }
}

/// A hermitian positive definite metric in the weighted frame.
#[derive(Debug, Clone)]
pub struct MetricField {
    rank: usize,
    values: Vec<DMatrix<C64>>,
}

impl MetricField {
    /// The reference metric: identity at every node.
    pub fn reference(grid: &QuadGrid, rank: usize) -> Self {
        Self {
            rank,
            values: vec![DMatrix::identity(rank, rank); grid.node_count()],
        }
    }

    /// Builds a metric from a pointwise matrix function. The values are
    /// symmetrized against roundoff and checked for positivity.
    pub fn try_from_fn<F>(grid: &QuadGrid, rank: usize, f: F) -> Result<Self, MetricError>
    where
        F: Fn(Node) -> DMatrix<C64> + Send + Sync,
    {
        let values = par_map(grid.node_count(), |i| linalg::hermitize(&f(grid.node(i))));
        Self::try_from_matrices(rank, values)
    }

    pub fn try_from_matrices(rank: usize, values: Vec<DMatrix<C64>>) -> Result<Self, MetricError> {
        for (node, m) in values.iter().enumerate() {
            if linalg::cholesky_lower(m).is_none() {
                return Err(MetricError::NotPositiveDefinite { node });
            }
        }
        Ok(Self { rank, values })
    }

    pub(crate) fn from_matrices_unchecked(rank: usize, values: Vec<DMatrix<C64>>) -> Self {
        Self { rank, values }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, node: usize) -> &DMatrix<C64> {
        &self.values[node]
    }

    pub fn values(&self) -> &[DMatrix<C64>] {
        &self.values
    }

    /// Lower Cholesky factors at every node.
    pub(crate) fn cholesky_all(&self) -> Result<Vec<DMatrix<C64>>, MetricError> {
        let factors = par_map(self.values.len(), |i| {
            linalg::cholesky_lower(&self.values[i])
        });
        factors
            .into_iter()
            .enumerate()
            .map(|(node, l)| l.ok_or(MetricError::NotPositiveDefinite { node }))
            .collect()
    }

    /// Multiplies the metric by a positive conformal factor per node.
    pub fn rescaled_by(&self, factors: &[f64]) -> Self {
        let values = self
            .values
            .iter()
            .zip(factors)
            .map(|(m, &f)| m.scale(f))
            .collect();
        Self {
            rank: self.rank,
            values,
        }
    }

    /// `∫ log det P ω`, the conformal volume of the metric relative to
    /// the reference.
    pub fn log_det_integral(&self, grid: &QuadGrid) -> Result<f64, MetricError> {
        let ls = self.cholesky_all()?;
        let f = ScalarField::from_values(
            ls.iter()
                .map(|l| {
                    let logdet: f64 = l.diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
                    C64::new(logdet, 0.0)
                })
                .collect(),
        );
        Ok(integrate(&f, grid)?.re)
    }

    /// Rescales by a constant so that `∫ log det P ω = 0`, fixing the
    /// conformal normalization shared with the reference metric.
    pub fn conformal_normalized(&self, grid: &QuadGrid) -> Result<Self, MetricError> {
        let mean = self.log_det_integral(grid)? / (self.rank as f64 * SPHERE_VOLUME);
        let factor = (-mean).exp();
        Ok(self.rescaled_by(&vec![factor; self.values.len()]))
    }

    /// Eigenvalues at one node of an endomorphism that is self-adjoint
    /// for this metric.
    pub fn operator_eigenvalues(&self, a: &EndoField, node: usize) -> DVector<f64> {
        let l = linalg::cholesky_lower(&self.values[node]).expect("metric is positive definite");
        linalg::hermitian_eigenvalues(&linalg::metric_frame(&l, a.value(node)))
    }

    /// Sup over nodes of the metric operator norm of a self-adjoint
    /// endomorphism field.
    pub fn operator_norm_sup(&self, a: &EndoField) -> f64 {
        let norms = par_map(self.values.len(), |i| {
            let l = linalg::cholesky_lower(&self.values[i]).expect("metric is positive definite");
            linalg::metric_operator_norm(&l, a.value(i))
        });
        norms.into_iter().fold(0.0, f64::max)
    }
}

/// Sup-distance between two metrics: the largest relative eigenvalue
/// deviation `max_i |λ_i(P₁⁻¹P₂) - 1|` over all nodes.
pub fn metric_distance(h1: &MetricField, h2: &MetricField) -> f64 {
    let devs = par_map(h1.values.len(), |i| {
        let l = linalg::cholesky_lower(h1.value(i)).expect("metric is positive definite");
        linalg::relative_eigenvalues(&l, h2.value(i))
            .iter()
            .map(|lam| (lam - 1.0).abs())
            .fold(0.0, f64::max)
    });
    devs.into_iter().fold(0.0, f64::max)
}

/// Mean-curvature contraction `iΛF` of a metric, in the weighted frame,
/// together with the resolution tail of the differentiated entries.
///
/// The result is self-adjoint for `h`; for the reference metric it is
/// the constant `diag(a_c)` to machine precision.
///
/// # Errors
///
/// Fails when the metric does not match the bundle rank or the grid.
pub fn curvature_contraction(
    h: &MetricField,
    bundle: &BundleSpec,
    grid: &QuadGrid,
) -> Result<(EndoField, f64), MetricError> {
    let r = bundle.rank();
    if h.rank() != r {
        return Err(MetricError::RankMismatch {
            metric: h.rank(),
            bundle: r,
        });
    }
    let n = grid.node_count();
    if h.len() != n {
        return Err(MetricError::Grid(GridError::NodeCountMismatch {
            field: h.len(),
            grid: n,
        }));
    }

    // Differentiate each matrix entry of P once in z and once with the
    // mixed operator; ∂̄P is the pointwise adjoint of ∂P.
    let mut tail = 0.0_f64;
    let mut d_fields = Vec::with_capacity(r * r);
    let mut dd_fields = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let entry = ScalarField::from_values((0..n).map(|q| h.value(q)[(i, j)]).collect());
            let (d, t1) = spectral_derivative(&entry, Direction::Z, grid)?;
            let (dd, t2) = mixed_second_derivative(&entry, grid)?;
            tail = tail.max(t1).max(t2);
            d_fields.push(d);
            dd_fields.push(dd);
        }
    }

    let half_degrees: Vec<f64> = bundle.degrees().iter().map(|&a| a as f64 / 2.0).collect();
    let deg_diag = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            C64::new(2.0 * half_degrees[i], 0.0)
        } else {
            C64::ZERO
        }
    });

    let values = par_map(n, |q| {
        let node = grid.node(q);
        let p = h.value(q);
        let p_inv = p
            .clone()
            .try_inverse()
            .expect("metric is positive definite");
        let dp = DMatrix::from_fn(r, r, |i, j| d_fields[i * r + j].values()[q]);
        let dbar_p = dp.adjoint();
        let ddp = linalg::hermitize(&DMatrix::from_fn(r, r, |i, j| {
            dd_fields[i * r + j].values()[q]
        }));

        let rho = node.rho();
        let w = (node.t * (1.0 - node.t)).sqrt();
        let delta = DMatrix::from_fn(r, r, |i, j| {
            if i == j {
                C64::from_polar(half_degrees[i] * w, -node.theta)
            } else {
                C64::ZERO
            }
        });
        let delta_bar = delta.adjoint();

        let x = &p_inv * &dp;
        let y = &p_inv * &dbar_p;
        let z_delta = &p_inv * (&delta * p);
        let k = &x - &z_delta - &delta;

        let dbar_k = -(&y * &x) + &p_inv * &ddp + &y * &z_delta
            - (&p_inv * (&deg_diag * p)).scale(rho / 2.0)
            - (&p_inv * (&delta * &dbar_p))
            - deg_diag.scale(rho / 2.0);
        let bracket = &delta_bar * &k - &k * &delta_bar;
        (dbar_k + bracket).scale(-1.0 / rho)
    });

    Ok((EndoField::from_matrices(r, values), tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn reference_curvature_is_the_degree_diagonal() {
        let grid = build_grid(16, 8).unwrap();
        for degrees in [vec![1, -1], vec![2, 0, -1]] {
            let bundle = BundleSpec::new(degrees.clone(), 2).unwrap();
            let h = MetricField::reference(&grid, bundle.rank());
            let (curv, tail) = curvature_contraction(&h, &bundle, &grid).unwrap();
            assert!(tail < 1e-12);
            for q in 0..grid.node_count() {
                let m = curv.value(q);
                for i in 0..bundle.rank() {
                    for j in 0..bundle.rank() {
                        let want = if i == j { degrees[i] as f64 } else { 0.0 };
                        assert!(
                            (m[(i, j)] - c(want, 0.0)).norm() < 1e-12,
                            "degrees {degrees:?} node {q} entry ({i},{j}): {}",
                            m[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conformal_factor_shifts_curvature_by_its_laplacian() {
        // For P = e^u · Id the contraction is diag(a) - (∂̄∂u)/ρ · Id;
        // with u = c·t(1-t) the shift is c·(1 - 6t + 6t²).
        let grid = build_grid(24, 8).unwrap();
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let amp = 0.7;
        let h = MetricField::try_from_fn(&grid, 2, |node| {
            DMatrix::identity(2, 2).scale((amp * node.t * (1.0 - node.t)).exp())
        })
        .unwrap();
        let (curv, tail) = curvature_contraction(&h, &bundle, &grid).unwrap();
        assert!(tail < RESOLUTION_TAIL_TOL_LOCAL);
        for (q, node) in grid.nodes().iter().enumerate() {
            let shift = amp * (1.0 - 6.0 * node.t + 6.0 * node.t * node.t);
            let m = curv.value(q);
            assert!((m[(0, 0)] - c(1.0 - shift, 0.0)).norm() < 1e-9);
            assert!((m[(1, 1)] - c(-1.0 - shift, 0.0)).norm() < 1e-9);
            assert!(m[(0, 1)].norm() < 1e-9);
        }
    }

    const RESOLUTION_TAIL_TOL_LOCAL: f64 = 1e-8;

    fn wavy_metric(grid: &QuadGrid) -> MetricField {
        // Bounded, sphere-smooth, non-diagonal: the off-diagonal entry
        // is z/(1+|z|²) = √(t(1-t)) e^{iθ}.
        MetricField::try_from_fn(grid, 2, |node| {
            let s = (node.t * (1.0 - node.t)).sqrt();
            let off = C64::from_polar(0.25 * s, node.theta);
            let bump = 0.3 * node.t * (1.0 - node.t);
            DMatrix::from_row_slice(
                2,
                2,
                &[c(1.2 + bump, 0.0), off, off.conj(), c(0.9 - bump, 0.0)],
            )
        })
        .unwrap()
    }

    #[test]
    fn total_curvature_is_the_bundle_degree() {
        // ∫ tr(iΛF) ω = 2π · deg E for any smooth metric.
        let grid = build_grid(24, 12).unwrap();
        for degrees in [vec![1, -1], vec![2, 0]] {
            let bundle = BundleSpec::new(degrees, 2).unwrap();
            let h = wavy_metric(&grid);
            let (curv, tail) = curvature_contraction(&h, &bundle, &grid).unwrap();
            assert!(tail < RESOLUTION_TAIL_TOL_LOCAL);
            let total = integrate(&curv.trace_field(), &grid).unwrap();
            let want = 2.0 * PI * bundle.degree() as f64;
            assert!(
                (total - c(want, 0.0)).norm() < 1e-8,
                "got {total} want {want}"
            );
        }
    }

    #[test]
    fn curvature_is_self_adjoint_for_the_metric() {
        let grid = build_grid(24, 12).unwrap();
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let h = wavy_metric(&grid);
        let (curv, _) = curvature_contraction(&h, &bundle, &grid).unwrap();
        for q in 0..grid.node_count() {
            let m = h.value(q) * curv.value(q);
            assert!(crate::linalg::hermitian_defect(&m) < 1e-8);
        }
    }

    #[test]
    fn metric_distance_sees_relative_eigenvalue_spread() {
        let grid = build_grid(8, 8).unwrap();
        let h = wavy_metric(&grid);
        assert!(metric_distance(&h, &h) < 1e-14);
        let scaled = h.rescaled_by(&vec![1.01; grid.node_count()]);
        assert!((metric_distance(&h, &scaled) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn conformal_normalization_zeroes_the_log_det_integral() {
        let grid = build_grid(12, 8).unwrap();
        let h = wavy_metric(&grid).rescaled_by(&vec![3.7; grid.node_count()]);
        let normalized = h.conformal_normalized(&grid).unwrap();
        assert!(normalized.log_det_integral(&grid).unwrap().abs() < 1e-10);
    }

    #[test]
    fn non_positive_metrics_are_rejected() {
        let grid = build_grid(4, 4).unwrap();
        let err = MetricField::try_from_fn(&grid, 2, |_| {
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)])
        })
        .unwrap_err();
        assert!(matches!(err, MetricError::NotPositiveDefinite { node: 0 }));
    }

    #[test]
    fn operator_eigenvalues_use_the_metric_frame() {
        let grid = build_grid(4, 4).unwrap();
        let h = MetricField::reference(&grid, 2).rescaled_by(&vec![2.0; grid.node_count()]);
        // a = diag(3, -1) is self-adjoint for any diagonal metric.
        let a = EndoField::constant(
            &grid,
            DMatrix::from_row_slice(2, 2, &[c(3.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
        );
        let eigs = h.operator_eigenvalues(&a, 0);
        assert!((eigs[0] + 1.0).abs() < 1e-13);
        assert!((eigs[1] - 3.0).abs() < 1e-13);
        assert!((h.operator_norm_sup(&a) - 3.0).abs() < 1e-13);
    }
}
