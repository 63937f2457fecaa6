mod common;

use common::{case_study, check_pile_invariants, pile_case};
use pile_kd::pile::{average_ensemble, count_reversed_pairs, pile_ensemble};
use pile_kd::{PileConfig, StopPolicy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn invariants_hold_on_random_groups(case in pile_case(30, 8)) {
        if let Err(msg) = check_pile_invariants(&case) {
            prop_assert!(false, "{msg}\n{case:?}");
        }
    }

    #[test]
    fn order_consistent_always_ends_consistent_or_capped(case in pile_case(12, 5)) {
        let config = PileConfig { stop_policy: StopPolicy::OrderConsistent, ..case.config.clone() };
        let g = case.group();
        let out = pile_ensemble(&g, &config).unwrap();
        let reversed = count_reversed_pairs(&out.logits, &g.labels());
        prop_assert_eq!(out.converged, reversed == 0);
        prop_assert!(out.converged || out.iterations_used == config.max_iters(g.len()));
    }
}

#[test]
fn case_study_average_and_fixed_point() {
    let g = case_study();
    let ae = average_ensemble(&g).unwrap();
    assert!((ae[0] - 0.1190).abs() <= 5e-5, "{ae:?}");
    assert!((ae[1] - 0.0528).abs() <= 5e-5, "{ae:?}");

    let out = pile_ensemble(&g, &PileConfig::default()).unwrap();
    assert!((out.logits[0] - 0.0590).abs() <= 0.0015, "{:?}", out.logits);
    assert!((out.logits[1] - 0.0981).abs() <= 0.0015, "{:?}", out.logits);
}

#[test]
fn case_study_order_consistent_is_one_update() {
    let config = PileConfig {
        stop_policy: StopPolicy::OrderConsistent,
        trace: true,
        ..PileConfig::default()
    };
    let g = case_study();
    let out = pile_ensemble(&g, &config).unwrap();
    assert_eq!(out.iterations_used, 1);
    assert!(out.converged);
    assert_eq!(out.trace.as_ref().unwrap().len(), 2);
    assert!((out.logits[0] - 0.08597).abs() <= 1e-4, "{:?}", out.logits);
    assert!((out.logits[1] - 0.09375).abs() <= 1e-4, "{:?}", out.logits);
    assert_eq!(count_reversed_pairs(&out.logits, &g.labels()), 0);
    assert_eq!(out.final_weights, vec![vec![1, 0, 1], vec![0, 0, 1]]);
}

#[test]
fn full_rate_jumps_to_the_surviving_mean() {
    let config = PileConfig {
        lambda: 1.0,
        stop_policy: StopPolicy::OrderConsistent,
        ..PileConfig::default()
    };
    let out = pile_ensemble(&case_study(), &config).unwrap();
    assert_eq!(out.logits[0], (0.0589 + 0.1057) / 2.0);
    assert_eq!(out.logits[1], 0.0983);
}
