//! Finite-difference checks of every analytic gradient in the crate.

mod common;

use common::{ce_check, distill_check, kto_checks, lm_check, SAMPLES, TOL};
use relevance_core::neural::gradcheck::GradCheckReport;

fn assert_ok(rep: &GradCheckReport) {
    assert!(rep.checked >= SAMPLES);
    assert!(rep.max_rel_error < TOL, "{rep:?}");
}

#[test]
fn encoder_cross_entropy_gradient() {
    assert_ok(&ce_check());
}

#[test]
fn decoder_lm_gradient() {
    assert_ok(&lm_check());
}

#[test]
fn kto_gradient() {
    kto_checks().iter().for_each(assert_ok);
}

#[test]
fn distill_gradient_through_student() {
    assert_ok(&distill_check());
}
