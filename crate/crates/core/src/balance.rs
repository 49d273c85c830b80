//! The balanced-metric fixed point iteration.
//!
//! One step of the iteration maps a Gram matrix `G` of the section
//! basis to the Gram matrix of the `G`-orthonormal basis measured in
//! the corrected Fubini-Study metric:
//!
//! 1. `P_s = (N/(rV)) M̂⁻¹` from the density of `G`,
//! 2. `c = (αβ/(1+α|φ|²)) [φ, φ^{*P_s}]`,
//! 3. `P̂ = P_s (Id - c)`,
//! 4. `T(G) = L⁻¹ <s_i, s_j>_{P̂} L⁻†` where `G = L L†`.
//!
//! `G` is balanced exactly when `T(G) = Id`; `T(G) - Id` is the moment
//! map of the problem and its Frobenius norm drives convergence. The
//! trace of `T(G)` equals the section count identically, so the
//! iteration cannot drift in overall scale, but an unstable bundle
//! pushes weight between summand blocks geometrically until the Gram
//! degenerates, which is reported as a divergence rather than an error.
//!
//! The iteration runs in the reference-normalized monomial basis (each
//! monomial divided by its reference norm), so it starts at exactly the
//! identity matrix and the degeneration test `min eig < 10⁻¹⁰ · tr/N`
//! is scale-meaningful.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::C64;
use crate::bergman::{BergmanError, fubini_study_from_tables, gram_from_tables};
use crate::bundle::{BundleError, BundleSpec};
use crate::grid::QuadGrid;
use crate::higgs::{
    HiggsError, HiggsSpec, QuantizationParams, bracket_correction, corrected_metric,
};
use crate::linalg;
use crate::metric::{EndoField, MetricField};

/// Relative eigenvalue floor below which the Gram iterate is declared
/// degenerate.
const DEGENERATION_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Higgs(#[from] HiggsError),
    #[error(transparent)]
    Bergman(#[from] BergmanError),
    #[error("damping must lie in (0, 1], got {0}")]
    BadDamping(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    /// Step fraction θ: the next Gram is `(1-θ) G + θ L T(G) L†`.
    pub damping: f64,
    /// Convergence target for `‖T(G) - Id‖_F`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            damping: 1.0,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BalanceOutcome {
    Converged,
    Diverged { reason: String },
    MaxIterations,
}

/// Everything produced by one application of the step operator.
pub struct StepOutcome {
    /// `T(G)`: the Gram of the orthonormal basis under the corrected
    /// metric. Equal to the identity exactly at a balanced Gram.
    pub orthonormal_gram: DMatrix<C64>,
    /// The corrected Fubini-Study metric `P̂ = P_s(Id - c)`.
    pub corrected: MetricField,
    /// The uncorrected Fubini-Study metric `P_s`.
    pub fubini_study: MetricField,
    /// The damped bracket correction `c`, evaluated at `P_s`.
    pub correction: EndoField,
    /// Lower Cholesky factor of the input Gram.
    pub factor: DMatrix<C64>,
}

impl StepOutcome {
    /// Frobenius norm of the moment map `T(G) - Id`.
    pub fn residual_norm(&self) -> f64 {
        let n = self.orthonormal_gram.nrows();
        (&self.orthonormal_gram - DMatrix::<C64>::identity(n, n)).norm()
    }
}

/// Applies the step operator to a Gram matrix over arbitrary basis
/// tables (entry `(c, a)` of a table is component `c` of section `a`).
pub fn t_step(
    tables: &[DMatrix<C64>],
    gram: &DMatrix<C64>,
    phi: &EndoField,
    params: QuantizationParams,
    grid: &QuadGrid,
) -> Result<StepOutcome, BergmanError> {
    let fubini_study = fubini_study_from_tables(tables, gram, grid)?;
    let correction = bracket_correction(phi, &fubini_study, params);
    let corrected = corrected_metric(&fubini_study, &correction);
    let mono_gram = gram_from_tables(tables, &corrected, grid);
    let factor = linalg::cholesky_lower(gram).ok_or(BergmanError::GramNotPositive)?;
    let a = factor
        .solve_lower_triangular(&mono_gram)
        .expect("cholesky factor is invertible");
    let orthonormal_gram = linalg::hermitize(
        &factor
            .solve_lower_triangular(&a.adjoint())
            .expect("cholesky factor is invertible")
            .adjoint(),
    );
    Ok(StepOutcome {
        orthonormal_gram,
        corrected,
        fubini_study,
        correction,
        factor,
    })
}

/// Integrates the moment map `M = ⟨u, (Id - c)u⟩_{h_s} - Id` in the
/// G-orthonormal frame `u = s·L⁻ᵀ`, returning the matrix and its
/// Frobenius norm.
///
/// Equal to `t_step(G) - Id`, but computed by transforming the section
/// tables before integrating instead of solving against the Cholesky
/// factor afterwards.
pub fn moment_map_residual(
    tables: &[DMatrix<C64>],
    gram: &DMatrix<C64>,
    phi: &EndoField,
    params: QuantizationParams,
    grid: &QuadGrid,
) -> Result<(DMatrix<C64>, f64), BergmanError> {
    let fubini_study = fubini_study_from_tables(tables, gram, grid)?;
    let correction = bracket_correction(phi, &fubini_study, params);
    let corrected = corrected_metric(&fubini_study, &correction);
    let factor = linalg::cholesky_lower(gram).ok_or(BergmanError::GramNotPositive)?;
    let n = gram.nrows();
    let inverse = factor
        .solve_lower_triangular(&DMatrix::<C64>::identity(n, n))
        .expect("cholesky factor is invertible");
    let transform = inverse.transpose();
    let ortho: Vec<DMatrix<C64>> = tables.iter().map(|t| t * &transform).collect();
    let mut matrix = linalg::hermitize(&gram_from_tables(&ortho, &corrected, grid));
    for i in 0..n {
        matrix[(i, i)] -= C64::new(1.0, 0.0);
    }
    let norm = matrix.norm();
    Ok((matrix, norm))
}

/// Result of the balanced-metric iteration.
pub struct BalanceReport {
    pub outcome: BalanceOutcome,
    pub iterations: usize,
    /// `‖T(G) - Id‖_F` after each step, including the final one.
    pub residual_history: Vec<f64>,
    /// Smallest eigenvalue of the Gram update proposed by each step,
    /// aligned with `residual_history`; when the iteration diverges,
    /// the last entry is the value that crossed the degeneration floor.
    pub min_gram_eigenvalue_history: Vec<f64>,
    pub final_residual: f64,
    /// Final Gram matrix in the raw monomial basis.
    pub gram: DMatrix<C64>,
    /// Corrected Fubini-Study metric of the final Gram: the balanced
    /// metric when the iteration converged.
    pub metric: MetricField,
    /// Uncorrected Fubini-Study metric of the final Gram.
    pub fubini_study: MetricField,
    /// Bracket correction at the final Gram.
    pub correction: EndoField,
}

/// The monomial basis rescaled so that the reference Gram is the
/// identity, along with the scale factors to translate Grams back.
pub(crate) struct IterationBasis {
    pub tables: Vec<DMatrix<C64>>,
    pub scale: Vec<f64>,
}

pub(crate) fn iteration_basis(
    bundle: &BundleSpec,
    level: i64,
    grid: &QuadGrid,
) -> Result<IterationBasis, BundleError> {
    let basis = bundle.evaluate_basis(level, grid)?;
    let href = MetricField::reference(grid, bundle.rank());
    let gref = gram_from_tables(basis.tables(), &href, grid);
    let scale: Vec<f64> = (0..gref.nrows()).map(|i| gref[(i, i)].re.sqrt()).collect();
    let tables = basis
        .tables()
        .iter()
        .map(|e| {
            let mut t = e.clone();
            for (a, &s) in scale.iter().enumerate() {
                for c in 0..t.nrows() {
                    t[(c, a)] /= s;
                }
            }
            t
        })
        .collect();
    Ok(IterationBasis { tables, scale })
}

fn to_raw_frame(gram: &DMatrix<C64>, scale: &[f64]) -> DMatrix<C64> {
    DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| {
        gram[(i, j)] * scale[i] * scale[j]
    })
}

/// Runs the damped fixed-point iteration for a bundle, Higgs field, and
/// quantization level.
///
/// Divergence through Gram degeneration (the signature of an unstable
/// bundle) is reported in the outcome; structural failures are errors.
pub fn solve_balanced(
    bundle: &BundleSpec,
    phi_spec: &HiggsSpec,
    params: QuantizationParams,
    level: i64,
    grid: &QuadGrid,
    opts: BalanceOptions,
) -> Result<BalanceReport, BalanceError> {
    params.validate()?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(BalanceError::BadDamping(opts.damping));
    }
    let basis = iteration_basis(bundle, level, grid)?;
    let phi = phi_spec.evaluate(bundle, grid);
    let n = basis.tables[0].ncols();

    let mut g = DMatrix::<C64>::identity(n, n);
    let mut residual_history = Vec::new();
    let mut eigenvalue_history = Vec::new();
    let mut iterations = 0;
    let mut last_valid: Option<(DMatrix<C64>, StepOutcome)> = None;
    loop {
        let step = match t_step(&basis.tables, &g, &phi, params, grid) {
            Ok(step) => step,
            Err(e @ (BergmanError::GramNotPositive | BergmanError::DegenerateDensity { .. })) => {
                // The iterate collapsed faster than the eigenvalue
                // floor could catch it; report the last healthy state.
                let Some((prev_g, prev_step)) = last_valid else {
                    return Err(e.into());
                };
                let last = residual_history.last().copied().unwrap_or(f64::NAN);
                return Ok(finish(
                    BalanceOutcome::Diverged {
                        reason: "gram_degeneration".into(),
                    },
                    iterations,
                    residual_history,
                    eigenvalue_history,
                    last,
                    &prev_g,
                    &basis.scale,
                    prev_step,
                ));
            }
            Err(e) => return Err(e.into()),
        };
        let residual = step.residual_norm();
        residual_history.push(residual);

        let update = &step.factor * &step.orthonormal_gram * step.factor.adjoint();
        let mut next =
            linalg::hermitize(&(g.scale(1.0 - opts.damping) + update.scale(opts.damping)));
        // Fixed points are only determined up to overall scale; pin the
        // gauge so different dampings land on the same Gram.
        next.scale_mut(n as f64 / next.trace().re);
        let eigs = linalg::hermitian_eigenvalues(&next);
        eigenvalue_history.push(eigs[0]);

        if residual < opts.tolerance {
            return Ok(finish(
                BalanceOutcome::Converged,
                iterations,
                residual_history,
                eigenvalue_history,
                residual,
                &g,
                &basis.scale,
                step,
            ));
        }
        if iterations >= opts.max_iterations {
            return Ok(finish(
                BalanceOutcome::MaxIterations,
                iterations,
                residual_history,
                eigenvalue_history,
                residual,
                &g,
                &basis.scale,
                step,
            ));
        }

        let floor = DEGENERATION_FLOOR * next.trace().re / n as f64;
        if eigs[0] < floor {
            return Ok(finish(
                BalanceOutcome::Diverged {
                    reason: "gram_degeneration".into(),
                },
                iterations + 1,
                residual_history,
                eigenvalue_history,
                residual,
                &g,
                &basis.scale,
                step,
            ));
        }
        last_valid = Some((std::mem::replace(&mut g, next), step));
        iterations += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    outcome: BalanceOutcome,
    iterations: usize,
    residual_history: Vec<f64>,
    min_gram_eigenvalue_history: Vec<f64>,
    final_residual: f64,
    g: &DMatrix<C64>,
    scale: &[f64],
    step: StepOutcome,
) -> BalanceReport {
    BalanceReport {
        outcome,
        iterations,
        residual_history,
        min_gram_eigenvalue_history,
        final_residual,
        gram: to_raw_frame(g, scale),
        metric: step.corrected,
        fubini_study: step.fubini_study,
        correction: step.correction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bergman::bergman_function;
    use crate::grid::{SPHERE_VOLUME, build_grid};
    use crate::metric::metric_distance;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn co_higgs() -> (BundleSpec, HiggsSpec) {
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let phi = HiggsSpec::new(&bundle, vec![vec![], vec![], vec![c(1.0, 0.0)], vec![]]).unwrap();
        (bundle, phi)
    }

    #[test]
    fn trivial_bundle_reference_is_a_fixed_point() {
        let bundle = BundleSpec::new(vec![0, 0], 1).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 10).unwrap();
        let params = QuantizationParams::defaults(2, 3, 1.0);
        let report =
            solve_balanced(&bundle, &phi, params, 3, &grid, BalanceOptions::default()).unwrap();
        assert_eq!(report.outcome, BalanceOutcome::Converged);
        assert_eq!(report.iterations, 0);
        let href = MetricField::reference(&grid, 2);
        assert!(metric_distance(&href, &report.metric) < 1e-11);
    }

    #[test]
    fn stable_co_higgs_pair_converges() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let level = 4;
        let params = QuantizationParams::defaults(2, level, 1.0);
        let report = solve_balanced(
            &bundle,
            &phi,
            params,
            level,
            &grid,
            BalanceOptions::default(),
        )
        .unwrap();
        assert_eq!(
            report.outcome,
            BalanceOutcome::Converged,
            "{:?}",
            report.residual_history
        );
        assert!(report.final_residual < 1e-10);

        // At the fixed point the Bergman endomorphism of the balanced
        // metric is (N/rV)(Id - c).
        let basis = bundle.evaluate_basis(level, &grid).unwrap();
        let b = bergman_function(&basis, &report.metric, &grid).unwrap();
        let n = bundle.section_count(level).unwrap() as f64;
        let density = n / (2.0 * SPHERE_VOLUME);
        let mut defect = 0.0_f64;
        for q in 0..grid.node_count() {
            let want = (DMatrix::identity(2, 2) - report.correction.value(q)).scale(density);
            defect = defect.max(crate::linalg::max_entry_norm(&(b.value(q) - want)));
        }
        assert!(defect < 1e-8, "defect {defect}");
    }

    #[test]
    fn unstable_splitting_degenerates() {
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let params = QuantizationParams::defaults(2, 3, 1.0);
        let report =
            solve_balanced(&bundle, &phi, params, 3, &grid, BalanceOptions::default()).unwrap();
        assert_eq!(
            report.outcome,
            BalanceOutcome::Diverged {
                reason: "gram_degeneration".into()
            }
        );
        assert!(
            report.iterations >= 30 && report.iterations <= 80,
            "{}",
            report.iterations
        );
        // The trace gauge keeps tr G = N, so the relative floor is
        // 1e-10 on the nose and the eigenvalue collapse is visible in
        // the recorded history.
        let eigs = &report.min_gram_eigenvalue_history;
        assert_eq!(eigs.len(), report.iterations);
        assert!(*eigs.last().unwrap() < 1e-10);
        assert!(eigs.last().unwrap() < &(eigs[0] * 1e-6));
    }

    #[test]
    fn damping_reaches_the_same_balanced_metric() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let params = QuantizationParams::defaults(2, 4, 1.0);
        let full =
            solve_balanced(&bundle, &phi, params, 4, &grid, BalanceOptions::default()).unwrap();
        let damped = solve_balanced(
            &bundle,
            &phi,
            params,
            4,
            &grid,
            BalanceOptions {
                damping: 0.5,
                ..BalanceOptions::default()
            },
        )
        .unwrap();
        assert_eq!(damped.outcome, BalanceOutcome::Converged);
        assert!(metric_distance(&full.metric, &damped.metric) < 1e-8);
    }

    #[test]
    fn folding_the_coupling_into_the_field_is_exact() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let a = solve_balanced(
            &bundle,
            &phi,
            QuantizationParams::defaults(2, 4, 4.0),
            4,
            &grid,
            BalanceOptions::default(),
        )
        .unwrap();
        let b = solve_balanced(
            &bundle,
            &phi.scaled(c(2.0, 0.0)),
            QuantizationParams::defaults(2, 4, 1.0),
            4,
            &grid,
            BalanceOptions::default(),
        )
        .unwrap();
        assert_eq!(a.outcome, BalanceOutcome::Converged);
        assert!(metric_distance(&a.metric, &b.metric) < 1e-10);
    }

    /// A deterministic hermitian positive Gram away from the reference:
    /// the reference Gram under a diagonal congruence plus a rank-one
    /// bump.
    fn skewed_gram(gref: &DMatrix<C64>) -> DMatrix<C64> {
        let n = gref.nrows();
        let v = DMatrix::from_fn(n, 1, |i, _| c(0.3 + 0.1 * i as f64, 0.05 * i as f64 - 0.1));
        let bump = (&v * v.adjoint()).scale(0.2 * gref.trace().re / n as f64);
        let mut g = gref + bump;
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] *= (1.0 + 0.1 * i as f64).sqrt() * (1.0 + 0.1 * j as f64).sqrt();
            }
        }
        g
    }

    #[test]
    fn moment_map_matches_the_step_operator() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let level = 4;
        let params = QuantizationParams::defaults(2, level, 1.0);
        let basis = bundle.evaluate_basis(level, &grid).unwrap();
        let href = MetricField::reference(&grid, 2);
        let g = skewed_gram(&crate::bergman::gram(&basis, &href, &grid).unwrap());
        let field = phi.evaluate(&bundle, &grid);

        let step = t_step(basis.tables(), &g, &field, params, &grid).unwrap();
        let (matrix, norm) =
            moment_map_residual(basis.tables(), &g, &field, params, &grid).unwrap();

        let n = g.nrows();
        let diff = &matrix + DMatrix::<C64>::identity(n, n) - &step.orthonormal_gram;
        assert!(crate::linalg::max_entry_norm(&diff) < 1e-13);
        assert!((norm - step.residual_norm()).abs() < 1e-13);
    }

    #[test]
    fn step_trace_is_the_section_count() {
        // tr T(G) = N for any positive G because the correction is
        // trace-free against the Fubini-Study density.
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let level = 4;
        let params = QuantizationParams::defaults(2, level, 1.0);
        let basis = bundle.evaluate_basis(level, &grid).unwrap();
        let href = MetricField::reference(&grid, 2);
        let g = skewed_gram(&crate::bergman::gram(&basis, &href, &grid).unwrap());
        let field = phi.evaluate(&bundle, &grid);

        let (matrix, _) = moment_map_residual(basis.tables(), &g, &field, params, &grid).unwrap();
        assert!(matrix.trace().norm() < 1e-11 * g.nrows() as f64);
    }

    #[test]
    fn bad_damping_is_rejected() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(8, 10).unwrap();
        let err = solve_balanced(
            &bundle,
            &phi,
            QuantizationParams::defaults(2, 4, 1.0),
            4,
            &grid,
            BalanceOptions {
                damping: 0.0,
                ..BalanceOptions::default()
            },
        );
        assert!(matches!(err, Err(BalanceError::BadDamping(_))));
    }
}
