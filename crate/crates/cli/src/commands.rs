//! Subcommand implementations.
//!
//! Each command loads the experiment config, runs the corresponding
//! computation, writes a JSON artifact plus a CSV table into the output
//! directory, prints a one-line summary, and maps the result to the
//! process exit code: 0 for a converged run or a passed check, 2 for
//! divergence, 3 for an exhausted iteration budget, 1 for runtime
//! failures. Config problems exit 4 before any computation starts.
//!
//! Artifacts never contain wall-clock data, so runs with equal configs
//! and seeds produce byte-identical files.

use std::f64::consts::{PI, TAU};
use std::path::PathBuf;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use higgs_balance::C64;
use higgs_balance::balance::{BalanceError, BalanceOutcome, solve_balanced};
use higgs_balance::bergman::{bergman_defect, bergman_function, decay_exponent, gram};
use higgs_balance::bundle::{BundleSpec, weighted_monomial};
use higgs_balance::flow::{FlowError, FlowOutcome, compare_metrics, heat_flow, hitchin_residual};
use higgs_balance::grid::{QuadGrid, SPHERE_VOLUME, ScalarField, integrate};
use higgs_balance::metric::{EndoField, MetricField};
use higgs_balance::stability::{
    InvariantLine, StabilityError, StabilityVerdict, closed_form_weight, gieseker_report,
    numeric_weight_curve,
};

use crate::CliError;
use crate::artifacts::{Csv, Envelope, fmt_f64, write_json};
use crate::config::ExperimentConfig;

/// Gate for the reference Bergman identity `2πB = diag(aᵢ+k+1)`.
const REFERENCE_IDENTITY_TOL: f64 = 1e-10;

/// Gate for the quadrature oracle against closed-form pairings.
const ORACLE_TOL: f64 = 1e-12;

pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub seed: u64,
}

fn balance_error(e: BalanceError) -> CliError {
    match e {
        BalanceError::Bundle(_) | BalanceError::Higgs(_) | BalanceError::BadDamping(_) => {
            CliError::Config(format!("balance: {e}"))
        }
        BalanceError::Bergman(_) => CliError::Runtime(format!("balance: {e}")),
    }
}

fn flow_error(e: FlowError) -> CliError {
    match e {
        FlowError::Bundle(_) | FlowError::Higgs(_) | FlowError::BadOptions(_) => {
            CliError::Config(format!("flow: {e}"))
        }
        FlowError::Metric(_) | FlowError::MetricDegenerate(_) => {
            CliError::Runtime(format!("flow: {e}"))
        }
    }
}

fn stability_error(e: StabilityError) -> CliError {
    match e {
        StabilityError::Bergman(_)
        | StabilityError::Grid(_)
        | StabilityError::AdaptedBasisDegenerate => CliError::Runtime(format!("stability: {e}")),
        _ => CliError::Config(format!("stability: {e}")),
    }
}

fn balance_outcome_parts(outcome: &BalanceOutcome) -> (&'static str, Option<String>, i32) {
    match outcome {
        BalanceOutcome::Converged => ("converged", None, 0),
        BalanceOutcome::Diverged { reason } => ("diverged", Some(reason.clone()), 2),
        BalanceOutcome::MaxIterations => ("max_iterations", None, 3),
    }
}

fn flow_outcome_parts(outcome: &FlowOutcome) -> (&'static str, i32) {
    match outcome {
        FlowOutcome::Converged => ("converged", 0),
        FlowOutcome::Plateaued => ("plateaued", 2),
        FlowOutcome::MaxSteps => ("max_steps", 3),
    }
}

#[derive(Serialize)]
struct RiemannRoch {
    level: i64,
    sections: usize,
    predicted: i64,
    exact: bool,
}

/// `h⁰(E ⊗ L^k) = rk·k + deg E + rk` on the sphere; the section count
/// must match it exactly for every admissible level.
fn riemann_roch(bundle: &BundleSpec, level: i64) -> Result<RiemannRoch, CliError> {
    let sections = bundle
        .section_count(level)
        .map_err(|e| CliError::Config(format!("level {level}: {e}")))?;
    let r = bundle.rank() as i64;
    let predicted = r * level + bundle.degree() + r;
    Ok(RiemannRoch {
        level,
        sections,
        predicted,
        exact: sections as i64 == predicted,
    })
}

/// Sup operator-norm of `B(ĥ) - (N/(rV))(Id - c)` at the final iterate:
/// the pointwise form of the balance condition. `None` when the final
/// Gram is too degenerate to evaluate it.
fn balanced_defect(
    bundle: &BundleSpec,
    level: i64,
    metric: &MetricField,
    correction: &EndoField,
    grid: &QuadGrid,
) -> Option<f64> {
    let basis = bundle.evaluate_basis(level, grid).ok()?;
    let b = bergman_function(&basis, metric, grid).ok()?;
    let r = bundle.rank();
    let scale = basis.count() as f64 / (r as f64 * SPHERE_VOLUME);
    let identity = MetricField::reference(grid, r);
    let values = (0..grid.node_count())
        .map(|q| b.value(q) - (identity.value(q) - correction.value(q)).scale(scale))
        .collect();
    let defect = EndoField::from_matrices(r, values);
    Some(metric.operator_norm_sup(&defect))
}

#[derive(Serialize)]
struct BalanceArtifact {
    level: i64,
    riemann_roch: RiemannRoch,
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    iterations: usize,
    final_residual: f64,
    correction_sup: f64,
    correction_trace_sup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bergman_defect_sup: Option<f64>,
}

pub fn balance(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let phi = cfg.higgs(&bundle)?;
    let level = cfg.level()?;
    let params = cfg.params(&bundle, level)?;
    let grid = cfg.grid()?;
    let riemann_roch = riemann_roch(&bundle, level)?;

    let report = solve_balanced(&bundle, &phi, params, level, &grid, cfg.balance_options())
        .map_err(balance_error)?;
    let defect = balanced_defect(&bundle, level, &report.metric, &report.correction, &grid);
    let trace_sup = report
        .correction
        .trace_field()
        .values()
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    let (outcome, reason, exit) = balance_outcome_parts(&report.outcome);
    println!(
        "balance: {outcome} after {} iterations, residual {:.3e}",
        report.iterations, report.final_residual
    );

    let artifact = BalanceArtifact {
        level,
        riemann_roch,
        outcome,
        reason,
        iterations: report.iterations,
        final_residual: report.final_residual,
        correction_sup: report.correction.sup_abs(),
        correction_trace_sup: trace_sup,
        bergman_defect_sup: defect,
    };
    write_json(
        &ctx.out,
        "balance.json",
        &Envelope::new("balance", ctx.seed, cfg, artifact),
    )?;
    let mut csv = Csv::new(&["iteration", "residual", "min_eig"]);
    let eigs = &report.min_gram_eigenvalue_history;
    for (i, r) in report.residual_history.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*r), fmt_f64(eigs[i])]);
    }
    csv.write(&ctx.out, "balance_residuals.csv")?;
    Ok(exit)
}

#[derive(Serialize)]
struct FlowArtifact {
    tau: f64,
    outcome: &'static str,
    steps: usize,
    final_residual: f64,
    final_tail: f64,
    max_tail: f64,
    distance_from_reference: f64,
}

pub fn flow(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let phi = cfg.higgs(&bundle)?;
    let tau = cfg.quantization.tau;
    let grid = cfg.grid()?;

    let report = heat_flow(&bundle, &phi, tau, &grid, cfg.flow_options()).map_err(flow_error)?;
    let reference = MetricField::reference(&grid, bundle.rank());
    let distance = compare_metrics(&report.metric, &reference, &grid)
        .map_err(|e| CliError::Runtime(format!("flow: {e}")))?;
    let (outcome, exit) = flow_outcome_parts(&report.outcome);
    println!(
        "flow: {outcome} after {} steps, residual {:.3e}",
        report.steps, report.final_residual
    );

    let artifact = FlowArtifact {
        tau,
        outcome,
        steps: report.steps,
        final_residual: report.final_residual,
        final_tail: report.final_tail,
        max_tail: report.max_tail,
        distance_from_reference: distance,
    };
    write_json(
        &ctx.out,
        "flow.json",
        &Envelope::new("flow", ctx.seed, cfg, artifact),
    )?;
    let mut csv = Csv::new(&["step", "residual"]);
    for (i, r) in report.residual_history.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*r)]);
    }
    csv.write(&ctx.out, "flow_residuals.csv")?;
    Ok(exit)
}

#[derive(Serialize)]
struct FlowSummary {
    outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

#[derive(Serialize)]
struct SweepRow {
    level: i64,
    sections: usize,
    riemann_roch_exact: bool,
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    iterations: usize,
    final_residual: f64,
    /// Sup norm of the coupled-equation defect of the balanced metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    hitchin_sup: Option<f64>,
    /// Distance to the heat-flow limit, when the flow converged.
    #[serde(skip_serializing_if = "Option::is_none")]
    flow_distance: Option<f64>,
}

#[derive(Serialize)]
struct SweepArtifact {
    tau: f64,
    flow: FlowSummary,
    rows: Vec<SweepRow>,
}

pub fn sweep(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let phi = cfg.higgs(&bundle)?;
    let k_range = cfg.k_range()?;
    let tau = cfg.quantization.tau;
    let grid = cfg.grid()?;
    let phi_field = phi.evaluate(&bundle, &grid);

    let (flow_summary, flow_metric) = match heat_flow(&bundle, &phi, tau, &grid, cfg.flow_options())
    {
        Ok(rep) => {
            let (outcome, _) = flow_outcome_parts(&rep.outcome);
            let metric =
                matches!(rep.outcome, FlowOutcome::Converged).then_some(rep.metric.clone());
            (
                FlowSummary {
                    outcome: outcome.into(),
                    steps: Some(rep.steps),
                    final_residual: Some(rep.final_residual),
                    message: None,
                },
                metric,
            )
        }
        Err(e) => (
            FlowSummary {
                outcome: "error".into(),
                steps: None,
                final_residual: None,
                message: Some(e.to_string()),
            },
            None,
        ),
    };

    let mut rows = Vec::new();
    let mut exit = 0;
    for &k in &k_range {
        let params = cfg.params(&bundle, k)?;
        let rr = riemann_roch(&bundle, k)?;
        let report = solve_balanced(&bundle, &phi, params, k, &grid, cfg.balance_options())
            .map_err(balance_error)?;
        let hitchin_sup = hitchin_residual(&report.metric, &phi_field, tau, &bundle, &grid)
            .ok()
            .map(|info| info.sup);
        let flow_distance = flow_metric
            .as_ref()
            .and_then(|m| compare_metrics(&report.metric, m, &grid).ok());
        let (outcome, reason, code) = balance_outcome_parts(&report.outcome);
        exit = exit.max(code);
        rows.push(SweepRow {
            level: k,
            sections: rr.sections,
            riemann_roch_exact: rr.exact,
            outcome,
            reason,
            iterations: report.iterations,
            final_residual: report.final_residual,
            hitchin_sup,
            flow_distance,
        });
    }
    println!(
        "sweep: {} levels, flow {}, worst exit {exit}",
        rows.len(),
        flow_summary.outcome
    );

    let mut csv = Csv::new(&[
        "level",
        "sections",
        "riemann_roch",
        "outcome",
        "iterations",
        "residual",
        "hitchin_sup",
        "flow_distance",
    ]);
    for row in &rows {
        csv.row(&[
            row.level.to_string(),
            row.sections.to_string(),
            row.riemann_roch_exact.to_string(),
            row.outcome.to_string(),
            row.iterations.to_string(),
            fmt_f64(row.final_residual),
            row.hitchin_sup.map(fmt_f64).unwrap_or_default(),
            row.flow_distance.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    let artifact = SweepArtifact {
        tau,
        flow: flow_summary,
        rows,
    };
    write_json(
        &ctx.out,
        "sweep.json",
        &Envelope::new("sweep", ctx.seed, cfg, artifact),
    )?;
    csv.write(&ctx.out, "sweep.csv")?;
    Ok(exit)
}

/// A deterministic smooth perturbation of the reference metric: each
/// summand gets the conformal factor `exp(amplitude·(c₀x + c₁y + c₂w))`
/// in the sphere embedding coordinates `x, y, w`, and adjacent summands
/// are coupled through an off-diagonal `√(t(1-t))e^{iθ}` term. The
/// coefficients come from a seeded stream, so equal seeds give equal
/// metrics.
fn seeded_metric(
    bundle: &BundleSpec,
    grid: &QuadGrid,
    amplitude: f64,
    seed: u64,
) -> Result<(MetricField, Vec<[f64; 4]>), CliError> {
    let r = bundle.rank();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let coefficients: Vec<[f64; 4]> = (0..r)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut zero = MetricField::reference(grid, r).value(0).clone();
    zero.fill(C64::ZERO);
    let coeffs = coefficients.clone();
    let metric = MetricField::try_from_fn(grid, r, move |node| {
        let s = 2.0 * (node.t * (1.0 - node.t)).sqrt();
        let x = s * node.theta.cos();
        let y = s * node.theta.sin();
        let w = 2.0 * node.t - 1.0;
        let mut m = zero.clone();
        for (i, c) in coeffs.iter().enumerate() {
            let f = amplitude * (c[0] * x + c[1] * y + c[2] * w);
            m[(i, i)] = C64::new(f.exp(), 0.0);
        }
        for (i, c) in coeffs.iter().enumerate().take(r - 1) {
            let off = C64::from_polar(0.25 * amplitude * c[3] * s, node.theta);
            m[(i, i + 1)] = off;
            m[(i + 1, i)] = off.conj();
        }
        m
    })
    .map_err(|e| CliError::Config(format!("expansion.amplitude: {e}")))?;
    Ok((metric, coefficients))
}

#[derive(Serialize)]
struct BergmanRow {
    level: i64,
    sections: usize,
    reference_sup: f64,
    perturbed_sup: f64,
}

#[derive(Serialize)]
struct BergmanArtifact {
    amplitude: f64,
    coefficients: Vec<[f64; 4]>,
    reference_identity_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_exponent: Option<f64>,
    rows: Vec<BergmanRow>,
}

pub fn bergman(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let grid = cfg.grid()?;
    let levels = cfg.expansion.levels.clone();
    if levels.is_empty() {
        return Err(CliError::Config("expansion.levels is empty".into()));
    }
    let amplitude = cfg.expansion.amplitude;
    let (perturbed, coefficients) = seeded_metric(&bundle, &grid, amplitude, ctx.seed)?;
    let reference = MetricField::reference(&grid, bundle.rank());

    let mut rows = Vec::new();
    let mut sups = Vec::new();
    for &k in &levels {
        let sections = bundle
            .section_count(k)
            .map_err(|e| CliError::Config(format!("expansion.levels: {e}")))?;
        let (_, reference_sup) = bergman_defect(&bundle, k, &reference, &grid)
            .map_err(|e| CliError::Runtime(format!("bergman: {e}")))?;
        let (_, perturbed_sup) = bergman_defect(&bundle, k, &perturbed, &grid)
            .map_err(|e| CliError::Runtime(format!("bergman: {e}")))?;
        sups.push(perturbed_sup);
        rows.push(BergmanRow {
            level: k,
            sections,
            reference_sup,
            perturbed_sup,
        });
    }
    let reference_identity_ok = rows
        .iter()
        .all(|row| row.reference_sup <= REFERENCE_IDENTITY_TOL);
    let exponent = decay_exponent(&levels, &sups);
    println!(
        "bergman: reference identity {}, decay exponent {}",
        if reference_identity_ok {
            "ok"
        } else {
            "violated"
        },
        exponent
            .map(|e| format!("{e:.3}"))
            .unwrap_or_else(|| "n/a".into())
    );

    let mut csv = Csv::new(&["level", "sections", "reference_sup", "perturbed_sup"]);
    for row in &rows {
        csv.row(&[
            row.level.to_string(),
            row.sections.to_string(),
            fmt_f64(row.reference_sup),
            fmt_f64(row.perturbed_sup),
        ]);
    }
    let artifact = BergmanArtifact {
        amplitude,
        coefficients,
        reference_identity_ok,
        decay_exponent: exponent,
        rows,
    };
    write_json(
        &ctx.out,
        "bergman.json",
        &Envelope::new("bergman", ctx.seed, cfg, artifact),
    )?;
    csv.write(&ctx.out, "bergman.csv")?;
    Ok(if reference_identity_ok { 0 } else { 1 })
}

#[derive(Serialize)]
struct WeightArtifact {
    level: i64,
    subbundle_degree: i64,
    /// Which Gram anchors the one-parameter family: "balanced" when the
    /// iteration converged, "reference" otherwise.
    base: &'static str,
    balance_outcome: &'static str,
    nu: f64,
    sections_sub: i64,
    sections_total: usize,
    w_fs: f64,
    w_phi: f64,
    w_phi_alt: f64,
    total: f64,
    invariant: bool,
    invariance_residual: f64,
    block_forward: f64,
    block_backward: f64,
    curve_truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve_limit: Option<f64>,
}

pub fn weight(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let phi = cfg.higgs(&bundle)?;
    let level = cfg.level()?;
    let params = cfg.params(&bundle, level)?;
    let grid = cfg.grid()?;
    let (sub, t_samples) = cfg.subbundle(&bundle)?;

    let report = solve_balanced(&bundle, &phi, params, level, &grid, cfg.balance_options())
        .map_err(balance_error)?;
    let (balance_outcome, _, _) = balance_outcome_parts(&report.outcome);
    let (h, base_gram, base) = if matches!(report.outcome, BalanceOutcome::Converged) {
        (report.metric, report.gram, "balanced")
    } else {
        let basis = bundle
            .evaluate_basis(level, &grid)
            .map_err(|e| CliError::Runtime(format!("weight: {e}")))?;
        let reference = MetricField::reference(&grid, bundle.rank());
        let g = gram(&basis, &reference, &grid)
            .map_err(|e| CliError::Runtime(format!("weight: {e}")))?;
        (reference, g, "reference")
    };
    let closed = closed_form_weight(&sub, &bundle, &phi, &h, params, level, &grid)
        .map_err(stability_error)?;
    let curve = numeric_weight_curve(
        &sub, &bundle, &phi, &base_gram, params, level, &grid, &t_samples,
    )
    .map_err(stability_error)?;
    println!(
        "weight: fs {:.6}, field {:.6}, total {:.6}, curve limit {}",
        closed.w_fs,
        closed.w_phi,
        closed.total,
        curve
            .limit
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "n/a".into())
    );

    let artifact = WeightArtifact {
        level,
        subbundle_degree: sub.degree(),
        base,
        balance_outcome,
        nu: closed.nu,
        sections_sub: closed.sections_sub,
        sections_total: closed.sections_total,
        w_fs: closed.w_fs,
        w_phi: closed.w_phi,
        w_phi_alt: closed.w_phi_alt,
        total: closed.total,
        invariant: closed.invariant,
        invariance_residual: closed.invariance_residual,
        block_forward: closed.block_norms.0,
        block_backward: closed.block_norms.1,
        curve_truncated: curve.truncated,
        curve_limit: curve.limit,
    };
    write_json(
        &ctx.out,
        "weight.json",
        &Envelope::new("weight", ctx.seed, cfg, artifact),
    )?;
    let mut csv = Csv::new(&["t", "weight"]);
    for &(t, w) in &curve.samples {
        csv.row(&[fmt_f64(t), fmt_f64(w)]);
    }
    csv.write(&ctx.out, "weight_curve.csv")?;
    Ok(0)
}

fn verdict_label(verdict: StabilityVerdict) -> &'static str {
    match verdict {
        StabilityVerdict::Stable => "stable",
        StabilityVerdict::Semistable => "semistable",
        StabilityVerdict::Unstable => "unstable",
    }
}

#[derive(Serialize)]
struct LineArtifact {
    degree: i64,
    components: Vec<Vec<[f64; 2]>>,
}

fn line_artifact(line: &InvariantLine) -> LineArtifact {
    LineArtifact {
        degree: line.degree,
        components: line
            .components
            .iter()
            .map(|c| c.iter().map(|z| [z.re, z.im]).collect())
            .collect(),
    }
}

#[derive(Serialize)]
struct ChiArtifact {
    level: i64,
    sub_slope: f64,
    total_slope: f64,
}

#[derive(Serialize)]
struct StabilityArtifact {
    verdict: &'static str,
    lines: Vec<LineArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    destabilizer: Option<LineArtifact>,
    riemann_roch: Vec<RiemannRoch>,
    table: Vec<ChiArtifact>,
}

pub fn stability(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let phi = cfg.higgs(&bundle)?;
    let k_range = cfg.k_range()?;

    let report = gieseker_report(&bundle, &phi, &k_range).map_err(stability_error)?;
    let riemann_roch_rows = k_range
        .iter()
        .map(|&k| riemann_roch(&bundle, k))
        .collect::<Result<Vec<_>, _>>()?;
    println!(
        "stability: {} ({} invariant line{})",
        verdict_label(report.verdict),
        report.lines.len(),
        if report.lines.len() == 1 { "" } else { "s" }
    );

    let mut csv = Csv::new(&["level", "sub_slope", "total_slope"]);
    for row in &report.table {
        csv.row(&[
            row.level.to_string(),
            fmt_f64(row.sub_slope),
            fmt_f64(row.total_slope),
        ]);
    }
    let artifact = StabilityArtifact {
        verdict: verdict_label(report.verdict),
        lines: report.lines.iter().map(line_artifact).collect(),
        destabilizer: report.destabilizer.as_ref().map(line_artifact),
        riemann_roch: riemann_roch_rows,
        table: report
            .table
            .iter()
            .map(|row| ChiArtifact {
                level: row.level,
                sub_slope: row.sub_slope,
                total_slope: row.total_slope,
            })
            .collect(),
    };
    write_json(
        &ctx.out,
        "stability.json",
        &Envelope::new("stability", ctx.seed, cfg, artifact),
    )?;
    csv.write(&ctx.out, "stability_chi.csv")?;
    Ok(0)
}

/// `Γ(two_x/2)` for positive integer `two_x`, exact in the integer case
/// and built from `Γ(1/2) = √π` in the half-integer case.
fn gamma_half(two_x: i64) -> f64 {
    if two_x % 2 == 0 {
        let mut g = 1.0;
        for j in 2..two_x / 2 {
            g *= j as f64;
        }
        g
    } else {
        let mut g = PI.sqrt();
        let mut t = 1;
        while t + 2 <= two_x {
            g *= t as f64 / 2.0;
            t += 2;
        }
        g
    }
}

#[derive(Serialize)]
struct OracleArtifact {
    level: i64,
    sections: usize,
    pairs: usize,
    gated_pairs: usize,
    /// Worst relative error of an equal-power pairing with a polynomial
    /// integrand, where the quadrature must be exact.
    worst_gated_error: f64,
    /// Worst magnitude (relative to 2π) of a pairing that vanishes by
    /// angular orthogonality.
    worst_vanishing_error: f64,
    /// Worst relative error of an equal-power pairing across summands
    /// whose degree parity differs; the integrand carries a half-integer
    /// exponent there, so this is reported but not gated.
    worst_half_integer_error: f64,
    pass: bool,
}

pub fn gram_oracle(ctx: &RunContext) -> Result<i32, CliError> {
    let cfg = &ctx.config;
    let bundle = cfg.bundle()?;
    let level = cfg.level()?;
    let grid = cfg.grid()?;
    let basis = bundle
        .monomial_basis(level)
        .map_err(|e| CliError::Config(format!("gram-oracle: {e}")))?;
    let degrees = bundle.degrees().to_vec();
    let start = Instant::now();

    let tables: Vec<ScalarField> = basis
        .iter()
        .map(|s| {
            let n = (degrees[s.summand] + level) as usize;
            let p = s.power;
            ScalarField::from_fn(&grid, move |node| weighted_monomial(p, n, node))
        })
        .collect();

    let mut csv = Csv::new(&[
        "row",
        "col",
        "measured_re",
        "measured_im",
        "expected",
        "error",
        "gated",
    ]);
    let mut worst_gated = 0.0_f64;
    let mut worst_vanishing = 0.0_f64;
    let mut worst_half_integer = 0.0_f64;
    let mut gated_pairs = 0;
    let mut pairs = 0;
    for a in 0..basis.len() {
        for b in a..basis.len() {
            pairs += 1;
            let (pa, pb) = (basis[a].power, basis[b].power);
            let na = degrees[basis[a].summand] + level;
            let nb = degrees[basis[b].summand] + level;
            let product = ScalarField::from_values(
                tables[a]
                    .values()
                    .iter()
                    .zip(tables[b].values())
                    .map(|(u, v)| u.conj() * v)
                    .collect(),
            );
            let measured = integrate(&product, &grid)
                .map_err(|e| CliError::Runtime(format!("gram-oracle: {e}")))?;

            let (expected, error, gated);
            if pa != pb {
                expected = 0.0;
                error = measured.norm() / TAU;
                gated = true;
                worst_vanishing = worst_vanishing.max(error);
            } else {
                let m2 = na + nb;
                let p2 = 2 * pa as i64;
                expected = TAU * gamma_half(p2 + 2) * gamma_half(m2 - p2 + 2) / gamma_half(m2 + 4);
                error = (measured - C64::new(expected, 0.0)).norm() / expected;
                gated = m2 % 2 == 0;
                if gated {
                    worst_gated = worst_gated.max(error);
                } else {
                    worst_half_integer = worst_half_integer.max(error);
                }
            }
            if gated {
                gated_pairs += 1;
            }
            csv.row(&[
                a.to_string(),
                b.to_string(),
                fmt_f64(measured.re),
                fmt_f64(measured.im),
                fmt_f64(expected),
                fmt_f64(error),
                gated.to_string(),
            ]);
        }
    }
    let pass = worst_gated <= ORACLE_TOL && worst_vanishing <= ORACLE_TOL;
    println!(
        "gram-oracle: {pairs} pairs, worst gated error {:.3e}, {:.3}s",
        worst_gated.max(worst_vanishing),
        start.elapsed().as_secs_f64()
    );

    let artifact = OracleArtifact {
        level,
        sections: basis.len(),
        pairs,
        gated_pairs,
        worst_gated_error: worst_gated,
        worst_vanishing_error: worst_vanishing,
        worst_half_integer_error: worst_half_integer,
        pass,
    };
    write_json(
        &ctx.out,
        "gram_oracle.json",
        &Envelope::new("gram-oracle", ctx.seed, cfg, artifact),
    )?;
    csv.write(&ctx.out, "gram_oracle_pairs.csv")?;
    Ok(if pass { 0 } else { 1 })
}
