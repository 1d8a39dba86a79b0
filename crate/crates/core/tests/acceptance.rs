//! Acceptance suite: one test per verification criterion. Each test
//! prints a single pass/fail line (visible with `--nocapture`) and
//! asserts the criterion.

use ctpower::verify;

fn run(check: ctpower::Result<verify::CheckReport>) {
    let report = check.expect("criterion execution failed");
    println!("{}", report.line());
    assert!(report.pass, "{}", report.line());
}

#[test]
fn criterion_1_region_figure_reproduction() {
    run(verify::criterion_1_region_figures());
}

#[test]
fn criterion_2_oracle_equivalence() {
    run(verify::criterion_2_oracle_equivalence());
}

#[test]
fn criterion_3_derivative_correctness() {
    run(verify::criterion_3_derivatives());
}

#[test]
fn criterion_4_rayleigh_reliability() {
    run(verify::criterion_4_rayleigh_mc());
}

#[test]
fn criterion_5_log_concavity_probes() {
    run(verify::criterion_5_log_concavity());
}

#[test]
fn criterion_6_robust_single_user_analytic() {
    run(verify::criterion_6_robust_analytic());
}

#[test]
fn criterion_7_fading_decomposition() {
    run(verify::criterion_7_fading_decomposition());
}

#[test]
fn criterion_8_relaxation_monotonicities() {
    run(verify::criterion_8_monotonicities());
}

#[test]
fn criterion_9_utility_correspondences() {
    run(verify::criterion_9_utilities());
}
