//! Acceptance suite: runs every criterion from `verify::criteria` and
//! prints one pass/fail line each. `cargo test --test acceptance --
//! --nocapture` shows the measured values.

use cleanflow::verify::criteria::{self, CriterionResult};

fn check(result: CriterionResult) {
    println!(
        "criterion {:<20} [{}] {}",
        result.key,
        if result.pass { "PASS" } else { "FAIL" },
        result.detail
    );
    assert!(result.pass, "{}: {}", result.name, result.detail);
}

#[test]
fn criterion_01_gamma_formula() {
    check(criteria::gamma_formula());
}

#[test]
fn criterion_02_equal_area_map() {
    check(criteria::equal_area_map());
}

#[test]
fn criterion_03_clean_ode_equivalence() {
    check(criteria::clean_ode_equivalence());
}

#[test]
fn criterion_04_clean_sde_equivalence() {
    check(criteria::clean_sde_equivalence());
}

#[test]
fn criterion_05_stochastic_sampler_equivalence() {
    check(criteria::stochastic_sampler_equivalence());
}

#[test]
fn criterion_06_ou_unit_variance() {
    check(criteria::ou_unit_variance());
}

#[test]
fn criterion_07_noise_consistency() {
    check(criteria::noise_consistency());
}

#[test]
fn criterion_08_renderer_vjp() {
    check(criteria::renderer_vjp());
}

#[test]
fn criterion_09_single_view_fidelity() {
    check(criteria::single_view_fidelity());
}

#[test]
fn criterion_10_directional_properties() {
    check(criteria::directional_properties());
}

#[test]
fn run_filter_selects_subsets() {
    let all = criteria::run(None);
    assert_eq!(all.len(), criteria::ALL_KEYS.len());
    let only = criteria::run(Some("gamma"));
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].key, "gamma");
}
