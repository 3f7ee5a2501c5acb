mod common;

use common::leakage_violations;

#[test]
fn month_t_outputs_ignore_later_months() {
    for (seed, t) in [(1, 7), (2, 9), (3, 11)] {
        let bad = leakage_violations(seed, 14, 12, t, t);
        assert!(bad.is_empty(), "seed {seed} month {t}: {bad:?} changed");
    }
}

#[test]
fn changing_the_previous_month_is_detected() {
    let bad = leakage_violations(4, 14, 12, 8, 7);
    for name in ["edgebank ratio", "edgebank_tw volume", "trained ratio model", "volume prediction"] {
        assert!(bad.iter().any(|b| b == name), "{name} did not react: {bad:?}");
    }
}
