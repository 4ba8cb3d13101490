mod support;

use support::checks::{self, TOLERANCE};

fn assert_checks(name: &str, rep: mmicap::autodiff::GradCheckReport) {
    assert!(
        rep.max_rel_error < TOLERANCE,
        "{name}: rel err {:e} (max abs {:e}) at {:?} over {} entries",
        rep.max_rel_error,
        rep.max_abs_error,
        rep.worst,
        rep.entries_checked
    );
}

#[test]
fn decoder_step_gradients() {
    for seed in 0..3 {
        assert_checks("decoder_step", checks::decoder_step_check(seed));
    }
}

#[test]
fn fc_baseline_step_gradients() {
    for seed in 0..3 {
        assert_checks("fc_baseline_step", checks::fc_baseline_step_check(seed));
    }
}

#[test]
fn lm_step_gradients() {
    for seed in 0..3 {
        assert_checks("lm_step", checks::lm_step_check(seed));
    }
}

#[test]
fn attention_step_gradients() {
    for seed in 0..3 {
        assert_checks("attention_step", checks::attention_step_check(seed));
    }
}

#[test]
fn attention_weights_are_a_distribution_over_cells() {
    let (sum_err, hull_err) = checks::attention_invariant_violations(1000, 42);
    assert!(sum_err < 1e-9, "{sum_err:e}");
    assert!(hull_err <= 0.0, "{hull_err:e}");
}
