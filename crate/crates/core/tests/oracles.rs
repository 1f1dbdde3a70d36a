//! The simulator's quantum channels checked against the independent dense
//! oracle in `common`, case by randomized case.

mod common;

const TOL: f64 = 1e-12;

#[test]
fn unitary_application_matches_dense_oracle() {
    let (cases, worst) = common::cases::unitary_cases(60);
    assert_eq!(cases, 60);
    assert!(worst < TOL, "worst deviation {worst:e}");
}

#[test]
fn depolarizing_channel_matches_pauli_sum_oracle() {
    let (cases, worst) = common::cases::depolarizing_cases(80);
    assert_eq!(cases, 80);
    assert!(worst < TOL, "worst deviation {worst:e}");
}

#[test]
fn idle_decoherence_matches_exponential_formula() {
    let (cases, worst) = common::cases::idle_cases(60);
    assert_eq!(cases, 60);
    assert!(worst < TOL, "worst deviation {worst:e}");
}

#[test]
fn werner_pairs_match_bell_mixture() {
    let (cases, worst) = common::cases::werner_cases(30);
    assert_eq!(cases, 30);
    assert!(worst < TOL, "worst deviation {worst:e}");
}

#[test]
fn idle_probability_saturates_and_vanishes() {
    // Closed-form endpoints of the idle model, independent of any state.
    assert_eq!(common::idle_prob(0.0, 1e12), 0.0);
    assert_eq!(dqsim::qstate::idle_depolar_prob(0.0, 1e12), 0.0);
    let nearly_one = dqsim::qstate::idle_depolar_prob(1e6, 1e12);
    assert!((nearly_one - 1.0).abs() < 1e-12);
    for (rate, dt) in [(0.055, 1e6), (0.5, 2e9), (3.0, 5e8), (10.0, 1e7)] {
        let got = dqsim::qstate::idle_depolar_prob(rate, dt);
        assert!((got - common::idle_prob(rate, dt)).abs() < 1e-15);
    }
}
