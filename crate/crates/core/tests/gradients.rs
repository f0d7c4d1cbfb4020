mod support;

use support::fd_checks;

const TOL: f64 = 1e-4;

fn check(errs: Vec<(String, f64)>) {
    assert!(!errs.is_empty());
    for (label, e) in errs {
        assert!(e < TOL, "{label}: rel err {e}");
    }
}

#[test]
fn toy_encoder_vjp() {
    check(fd_checks::toy_encoders());
}

#[test]
fn linear_operator_vjps() {
    check(fd_checks::linear_operators());
}

#[test]
fn eot_chain_vjp() {
    check(fd_checks::eot_chains());
}

#[test]
fn svd_factor_vjp() {
    check(fd_checks::svd_factors());
}

#[test]
fn alignment_loss_grads() {
    check(fd_checks::alignment_losses());
}

#[test]
fn full_pipeline_on_8x8() {
    check(fd_checks::full_pipeline());
}

#[test]
fn mask_sensitivity_matches_relaxed_composition() {
    check(fd_checks::mask_sensitivity());
}
