//! Heat-flow solver for the Hitchin equation, used as an independent
//! check on the balanced metrics.
//!
//! The equation is `iΛF_h + τ[φ, φ^{*h}] = c·Id` with `c = deg E / rk E`,
//! and the flow `dP/dt = -P·R_P` with `R_P` the left-hand defect runs
//! downhill towards a solution whenever one exists. Time stepping is
//! explicit Euler with an adaptive step: halve on a residual increase,
//! grow by a fixed factor on success. After every accepted step the
//! metric is conformally renormalized, which removes the one flat
//! direction of the flow.
//!
//! On an unstable bundle no solution exists and the flow escapes to
//! infinity at a constant residual; this shows up as a plateau, which
//! is detected and reported before the metric degenerates.

use thiserror::Error;

use crate::bundle::{BundleError, BundleSpec};
use crate::grid::QuadGrid;
use crate::higgs::{HiggsError, HiggsSpec, bracket};
use crate::linalg;
use crate::metric::{EndoField, MetricError, MetricField, curvature_contraction, metric_distance};

/// Smallest admissible time step before the flow is declared stuck.
const MIN_STEP: f64 = 1e-10;
/// Pointwise condition number of the metric beyond which the flow state
/// is no longer numerically trustworthy.
const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Higgs(#[from] HiggsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("metric condition number {0:.3e} exceeds the trustworthy range")]
    MetricDegenerate(f64),
    #[error("flow options invalid: {0}")]
    BadOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Convergence target for the sup operator norm of the defect.
    pub tolerance: f64,
    pub max_steps: usize,
    pub initial_step: f64,
    /// Upper bound for the adaptive time step.
    pub max_step: f64,
    /// Step growth factor applied after each accepted step.
    pub growth: f64,
    /// Number of accepted steps over which stagnation is measured.
    pub plateau_window: usize,
    /// Relative residual improvement below which the flow counts as
    /// stagnant over a full window.
    pub plateau_improvement: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            max_steps: 4000,
            initial_step: 0.05,
            max_step: 0.5,
            growth: 1.2,
            plateau_window: 25,
            plateau_improvement: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowOutcome {
    Converged,
    /// The residual stopped improving while staying above tolerance;
    /// the equation has no solution or the grid cannot resolve it.
    Plateaued,
    MaxSteps,
}

/// The Hitchin defect `iΛF + τ[φ,φ*] - c·Id` of a metric.
pub struct ResidualInfo {
    pub field: EndoField,
    /// Sup over nodes of the metric operator norm of the defect.
    pub sup: f64,
    /// Resolution tail of the curvature computation.
    pub tail: f64,
}

pub fn hitchin_residual(
    h: &MetricField,
    phi: &EndoField,
    tau: f64,
    bundle: &BundleSpec,
    grid: &QuadGrid,
) -> Result<ResidualInfo, MetricError> {
    let (curv, tail) = curvature_contraction(h, bundle, grid)?;
    let br = bracket(phi, h);
    let c = bundle.slope();
    let r = bundle.rank();
    let values = (0..grid.node_count())
        .map(|q| {
            let mut m = curv.value(q) + br.value(q).scale(tau);
            for i in 0..r {
                m[(i, i)] -= c;
            }
            m
        })
        .collect();
    let field = EndoField::from_matrices(r, values);
    let sup = h.operator_norm_sup(&field);
    Ok(ResidualInfo { field, sup, tail })
}

pub struct FlowReport {
    pub outcome: FlowOutcome,
    /// Number of accepted time steps.
    pub steps: usize,
    /// Residual sup norm before each accepted step and at the end.
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub metric: MetricField,
    /// Curvature resolution tail of the final metric.
    pub final_tail: f64,
    /// Largest curvature resolution tail seen along the flow; the
    /// transient after large steps is usually the worst point.
    pub max_tail: f64,
}

/// Sup over nodes of the pointwise metric condition number.
fn condition_number(h: &MetricField) -> f64 {
    let mut worst = 1.0_f64;
    for q in 0..h.len() {
        let eigs = linalg::hermitian_eigenvalues(h.value(q));
        if eigs[0] <= 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max(eigs[eigs.len() - 1] / eigs[0]);
    }
    worst
}

fn euler_candidate(h: &MetricField, defect: &EndoField, dt: f64) -> Option<MetricField> {
    let rank = h.rank();
    let values: Vec<_> = (0..h.len())
        .map(|q| linalg::hermitize(&(h.value(q) - (h.value(q) * defect.value(q)).scale(dt))))
        .collect();
    MetricField::try_from_matrices(rank, values).ok()
}

pub fn heat_flow(
    bundle: &BundleSpec,
    phi_spec: &HiggsSpec,
    tau: f64,
    grid: &QuadGrid,
    opts: FlowOptions,
) -> Result<FlowReport, FlowError> {
    if !(opts.initial_step > 0.0 && opts.max_step >= opts.initial_step && opts.growth >= 1.0) {
        return Err(FlowError::BadOptions(
            "need 0 < initial_step <= max_step and growth >= 1".into(),
        ));
    }
    if tau < 0.0 {
        return Err(FlowError::Higgs(HiggsError::TauNegative(tau)));
    }
    let phi = phi_spec.evaluate(bundle, grid);
    let mut h = MetricField::reference(grid, bundle.rank());
    let mut info = hitchin_residual(&h, &phi, tau, bundle, grid)?;
    let mut history = vec![info.sup];
    let mut max_tail = info.tail;
    let mut dt = opts.initial_step;
    let mut steps = 0;

    let finish = |outcome, steps, history: Vec<f64>, h, final_tail, max_tail| {
        let final_residual = *history.last().expect("history is never empty");
        Ok(FlowReport {
            outcome,
            steps,
            residual_history: history,
            final_residual,
            metric: h,
            final_tail,
            max_tail,
        })
    };

    loop {
        if info.sup < opts.tolerance {
            return finish(
                FlowOutcome::Converged,
                steps,
                history,
                h,
                info.tail,
                max_tail,
            );
        }
        if steps >= opts.max_steps {
            return finish(
                FlowOutcome::MaxSteps,
                steps,
                history,
                h,
                info.tail,
                max_tail,
            );
        }
        if steps >= opts.plateau_window {
            let before = history[steps - opts.plateau_window];
            if before - info.sup < opts.plateau_improvement * before {
                return finish(
                    FlowOutcome::Plateaued,
                    steps,
                    history,
                    h,
                    info.tail,
                    max_tail,
                );
            }
        }
        let cond = condition_number(&h);
        if cond > CONDITION_LIMIT {
            return Err(FlowError::MetricDegenerate(cond));
        }

        // Try the current step size, halving until the residual stops
        // increasing.
        let accepted = loop {
            if dt < MIN_STEP {
                break None;
            }
            let Some(candidate) = euler_candidate(&h, &info.field, dt) else {
                dt *= 0.5;
                continue;
            };
            let candidate = candidate.conformal_normalized(grid)?;
            let cand_info = hitchin_residual(&candidate, &phi, tau, bundle, grid)?;
            if cand_info.sup <= info.sup * (1.0 + 1e-9) {
                break Some((candidate, cand_info));
            }
            dt *= 0.5;
        };
        let Some((next, next_info)) = accepted else {
            return finish(
                FlowOutcome::Plateaued,
                steps,
                history,
                h,
                info.tail,
                max_tail,
            );
        };
        h = next;
        info = next_info;
        max_tail = max_tail.max(info.tail);
        history.push(info.sup);
        steps += 1;
        dt = (dt * opts.growth).min(opts.max_step);
    }
}

/// Distance between two metrics after sharing the conformal gauge, used
/// to compare balanced metrics against the flow limit.
pub fn compare_metrics(
    h1: &MetricField,
    h2: &MetricField,
    grid: &QuadGrid,
) -> Result<f64, MetricError> {
    Ok(metric_distance(
        &h1.conformal_normalized(grid)?,
        &h2.conformal_normalized(grid)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;
    use crate::balance::{BalanceOptions, solve_balanced};
    use crate::grid::build_grid;
    use crate::higgs::QuantizationParams;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn co_higgs() -> (BundleSpec, HiggsSpec) {
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let phi = HiggsSpec::new(&bundle, vec![vec![], vec![], vec![c(1.0, 0.0)], vec![]]).unwrap();
        (bundle, phi)
    }

    #[test]
    fn reference_solves_the_equation_at_unit_coupling() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let href = MetricField::reference(&grid, 2);
        let phi_field = phi.evaluate(&bundle, &grid);
        let info = hitchin_residual(&href, &phi_field, 1.0, &bundle, &grid).unwrap();
        assert!(info.sup < 1e-11, "sup {}", info.sup);

        let report = heat_flow(&bundle, &phi, 1.0, &grid, FlowOptions::default()).unwrap();
        assert_eq!(report.outcome, FlowOutcome::Converged);
        assert_eq!(report.steps, 0);
    }

    #[test]
    fn trivial_bundle_is_stationary() {
        let bundle = BundleSpec::new(vec![0, 0], 1).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 10).unwrap();
        let report = heat_flow(&bundle, &phi, 1.0, &grid, FlowOptions::default()).unwrap();
        assert_eq!(report.outcome, FlowOutcome::Converged);
        let href = MetricField::reference(&grid, 2);
        assert!(metric_distance(&href, &report.metric) < 1e-12);
    }

    #[test]
    fn strong_coupling_flow_converges() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let report = heat_flow(&bundle, &phi, 4.0, &grid, FlowOptions::default()).unwrap();
        assert_eq!(
            report.outcome,
            FlowOutcome::Converged,
            "{:?}",
            report.final_residual
        );
        assert!(report.final_residual < 1e-7);
        assert!(report.final_tail < 1e-6, "tail {}", report.final_tail);
        assert!(report.max_tail < 1e-3, "transient tail {}", report.max_tail);

        // The flow limit moved away from the reference metric.
        let href = MetricField::reference(&grid, 2);
        assert!(compare_metrics(&href, &report.metric, &grid).unwrap() > 0.05);
    }

    #[test]
    fn balanced_metrics_approach_the_flow_limit() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(12, 14).unwrap();
        let flow = heat_flow(&bundle, &phi, 4.0, &grid, FlowOptions::default()).unwrap();
        let mut dist = Vec::new();
        for level in [4, 8] {
            let params = QuantizationParams::defaults(2, level, 4.0);
            let balanced = solve_balanced(
                &bundle,
                &phi,
                params,
                level,
                &grid,
                BalanceOptions::default(),
            )
            .unwrap();
            dist.push(compare_metrics(&balanced.metric, &flow.metric, &grid).unwrap());
        }
        assert!(dist[1] < dist[0], "distances {dist:?}");
        assert!(dist[0] < 0.5, "distances {dist:?}");
    }

    #[test]
    fn unstable_direct_sum_plateaus_at_unit_residual() {
        let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
        let phi = HiggsSpec::zero(&bundle);
        let grid = build_grid(10, 12).unwrap();
        let report = heat_flow(&bundle, &phi, 1.0, &grid, FlowOptions::default()).unwrap();
        assert_eq!(report.outcome, FlowOutcome::Plateaued);
        assert!(
            (report.final_residual - 1.0).abs() < 1e-9,
            "{}",
            report.final_residual
        );
    }

    #[test]
    fn folding_the_coupling_matches_along_the_flow() {
        let (bundle, phi) = co_higgs();
        let grid = build_grid(10, 12).unwrap();
        let a = heat_flow(&bundle, &phi, 4.0, &grid, FlowOptions::default()).unwrap();
        let b = heat_flow(
            &bundle,
            &phi.scaled(c(2.0, 0.0)),
            1.0,
            &grid,
            FlowOptions::default(),
        )
        .unwrap();
        assert!(metric_distance(&a.metric, &b.metric) < 1e-10);
    }
}
