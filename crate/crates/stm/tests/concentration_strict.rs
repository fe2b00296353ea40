//! The sum-normalized without-replacement scenarios against their bound.
//! This fails: the deviation of a sum grows with `n` while the bound does
//! not, so the bound only describes the mean. Run with `--ignored`.

use stm::lab::{self, Scenario};
use stm_core::Scheme;

#[test]
#[ignore]
fn sum_without_replacement_is_sound() {
    let pool = lab::pool().unwrap();
    for n in [50, 200, 1000] {
        let sc = Scenario {
            n,
            scheme: Scheme::WithoutReplacement,
            ..Scenario::default()
        };
        let r = lab::run_scenario(&sc, &pool).unwrap();
        assert!(r.sound, "n = {n}: {:?}", r.estimate.rows);
    }
}
