//! Analytic gradients against central finite differences in f64.

mod common;

use common::{gradient_errors, tiny_config, GRAD_MAX_REL};
use speechrep::toylm::FeedbackMode;

fn check(mode: FeedbackMode, alpha: f64) {
    let errs = gradient_errors(tiny_config(mode, alpha));
    for (name, err) in &errs {
        assert!(*err < GRAD_MAX_REL, "{name}: max relative error {err:e}");
    }
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    eprintln!("{mode:?}: max relative error {worst:e}");
}

#[test]
fn discrete_objective_gradients_match_finite_differences() {
    check(FeedbackMode::Discrete, 0.0);
}

#[test]
fn continuous_objective_gradients_match_finite_differences() {
    check(FeedbackMode::Continuous, 100.0);
}
