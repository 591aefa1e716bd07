//! Acceptance gate: one test per criterion, each printing a pass/fail line.

use std::sync::OnceLock;

use liftrec::acceptance::{self, CalderonStudy, InternalRateStudy, Outcome};
use liftrec::Result;

fn rate_study() -> &'static Result<InternalRateStudy> {
    static S: OnceLock<Result<InternalRateStudy>> = OnceLock::new();
    S.get_or_init(acceptance::internal_rate_study)
}

fn calderon_study() -> &'static Result<CalderonStudy> {
    static S: OnceLock<Result<CalderonStudy>> = OnceLock::new();
    S.get_or_init(acceptance::calderon_study)
}

fn gate(o: Outcome) {
    println!("{o}");
    assert!(o.pass, "criterion {} failed: {}", o.id, o.detail);
}

#[test]
fn criterion_01_condition_thresholds() {
    gate(acceptance::criterion_1());
}

#[test]
fn criterion_02_exact_internal_recovery() {
    gate(acceptance::criterion_2());
}

#[test]
fn criterion_03_internal_noise_rate() {
    gate(acceptance::criterion_3(rate_study()));
}

#[test]
fn criterion_04_closed_form_certificate() {
    gate(acceptance::criterion_4());
}

#[test]
fn criterion_05_injectivity_constant() {
    gate(acceptance::criterion_5());
}

#[test]
fn criterion_06_subdifferential_forms() {
    gate(acceptance::criterion_6());
}

#[test]
fn criterion_07_duality_gap() {
    gate(acceptance::criterion_7());
}

#[test]
fn criterion_08_robustness_bounds() {
    gate(acceptance::criterion_8(rate_study(), calderon_study()));
}

#[test]
fn criterion_09_svt_optimality() {
    gate(acceptance::criterion_9());
}

#[test]
fn criterion_10_phaselift() {
    gate(acceptance::criterion_10());
}

#[test]
fn criterion_11_calderon_pipeline() {
    gate(acceptance::criterion_11(calderon_study()));
}

#[test]
fn criterion_12_frechet_derivative() {
    gate(acceptance::criterion_12());
}

#[test]
fn calderon_noisy_rate_is_linear() {
    let s = calderon_study().as_ref().expect("study runs");
    let slope = s.noisy_slope.expect("noisy sweep ran");
    println!("calderon noisy slope {slope:.3}");
    assert!((0.7..=1.3).contains(&slope), "slope {slope}");
}
