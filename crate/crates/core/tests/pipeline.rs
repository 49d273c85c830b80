//! Cross-module workflows through the public API only: the solver, the
//! flow oracle, and the weight machinery must tell one consistent story
//! about the same pair.

use higgs_balance::C64;
use higgs_balance::balance::{BalanceOptions, BalanceOutcome, solve_balanced};
use higgs_balance::bundle::BundleSpec;
use higgs_balance::flow::{FlowOptions, FlowOutcome, compare_metrics, heat_flow, hitchin_residual};
use higgs_balance::grid::build_grid;
use higgs_balance::higgs::{HiggsSpec, QuantizationParams};
use higgs_balance::metric::MetricField;
use higgs_balance::stability::{
    StabilityVerdict, SubbundleSpec, closed_form_weight, gieseker_report, invariance_check,
};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn split_pair() -> (BundleSpec, HiggsSpec) {
    let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
    let phi = HiggsSpec::new(&bundle, vec![vec![], vec![], vec![c(1.0, 0.0)], vec![]]).unwrap();
    (bundle, phi)
}

#[test]
fn balanced_metrics_track_the_flow_at_strong_coupling() {
    let (bundle, phi) = split_pair();
    let grid = build_grid(14, 26).unwrap();
    let tau = 4.0;
    let flow = heat_flow(&bundle, &phi, tau, &grid, FlowOptions::default()).unwrap();
    assert_eq!(flow.outcome, FlowOutcome::Converged);
    assert!(flow.final_residual < 1e-7);

    let field = phi.evaluate(&bundle, &grid);
    let mut distances = Vec::new();
    let mut residuals = Vec::new();
    for level in [5, 10] {
        let params = QuantizationParams::defaults(2, level, tau);
        let report = solve_balanced(
            &bundle,
            &phi,
            params,
            level,
            &grid,
            BalanceOptions::default(),
        )
        .unwrap();
        assert_eq!(report.outcome, BalanceOutcome::Converged);
        distances.push(compare_metrics(&report.metric, &flow.metric, &grid).unwrap());
        residuals.push(
            hitchin_residual(&report.metric, &field, tau, &bundle, &grid)
                .unwrap()
                .sup,
        );
    }
    assert!(
        distances[1] < distances[0],
        "doubling the level did not tighten the flow distance: {distances:?}"
    );
    assert!(residuals[1] < residuals[0], "{residuals:?}");
}

#[test]
fn every_diagnostic_flags_the_unstable_pair() {
    let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
    let zero = HiggsSpec::zero(&bundle);
    let grid = build_grid(10, 12).unwrap();

    let balance = solve_balanced(
        &bundle,
        &zero,
        QuantizationParams::defaults(2, 4, 1.0),
        4,
        &grid,
        BalanceOptions::default(),
    )
    .unwrap();
    assert!(matches!(balance.outcome, BalanceOutcome::Diverged { .. }));

    let flow = heat_flow(&bundle, &zero, 1.0, &grid, FlowOptions::default()).unwrap();
    assert_eq!(flow.outcome, FlowOutcome::Plateaued);

    let gieseker = gieseker_report(&bundle, &zero, &[3, 4, 5]).unwrap();
    assert_eq!(gieseker.verdict, StabilityVerdict::Unstable);
    assert_eq!(gieseker.destabilizer.unwrap().degree, 1);
}

#[test]
fn closed_form_weights_split_by_stability() {
    let grid = build_grid(12, 14).unwrap();
    let bundle = BundleSpec::new(vec![1, -1], 2).unwrap();
    let params = QuantizationParams::defaults(2, 3, 1.0);

    // Zero field: the O(1) summand is invariant and destabilizes.
    let zero = HiggsSpec::zero(&bundle);
    let href = MetricField::reference(&grid, 2);
    let top = SubbundleSpec::new(&bundle, 1, vec![vec![c(1.0, 0.0)], vec![]]).unwrap();
    assert!(invariance_check(&top, &zero, &bundle).invariant);
    let weight = closed_form_weight(&top, &bundle, &zero, &href, params, 3, &grid).unwrap();
    assert!(weight.invariant);
    assert!(weight.total < 0.0, "destabilizing weight {}", weight.total);

    // Nilpotent field: only the O(-1) summand is invariant and its
    // weight comes out positive.
    let (_, phi) = split_pair();
    assert!(!invariance_check(&top, &phi, &bundle).invariant);
    let low = SubbundleSpec::new(&bundle, -1, vec![vec![], vec![c(1.0, 0.0)]]).unwrap();
    assert!(invariance_check(&low, &phi, &bundle).invariant);
    let weight = closed_form_weight(&low, &bundle, &phi, &href, params, 3, &grid).unwrap();
    assert!(weight.invariant);
    assert!(weight.total > 0.0, "stable-side weight {}", weight.total);
}
