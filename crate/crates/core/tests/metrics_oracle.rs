mod common;

use common::{brute_force_pairs, check_metric_examples, check_pnr_against_brute_force, labels};
use pile_kd::metrics::{dcg, delta_ab, delta_gsb, pnr_mean, pnr_query, ScoredQuery};
use pile_kd::Error;
use proptest::prelude::*;

#[test]
fn pnr_matches_brute_force_enumeration() {
    check_pnr_against_brute_force(500, 11).unwrap();
}

#[test]
fn hand_computed_values() {
    check_metric_examples().unwrap();
}

#[test]
fn mean_skips_perfect_queries_and_counts_them() {
    let y = labels(&[1, 0, 2, 3]);
    let perfect = labels(&[2, 1, 0]);
    let report = pnr_mean([
        ScoredQuery {
            query_id: "a",
            scores: &[3.0, 2.0, 1.0],
            labels: &perfect,
        },
        ScoredQuery {
            query_id: "b",
            scores: &[1.0, 2.0, 3.0, 4.0],
            labels: &y,
        },
    ])
    .unwrap();
    assert_eq!(report.mean_pnr, Some(5.0));
    assert_eq!(report.skipped_no_discordant, 1);
    assert_eq!(report.per_query_pnr[0].pnr, None);
}

#[test]
fn all_single_doc_queries_is_an_empty_report() {
    let y = labels(&[2]);
    let err = pnr_mean((0..3).map(|_| ScoredQuery {
        query_id: "q",
        scores: &[0.5],
        labels: &y,
    }))
    .unwrap_err();
    assert!(matches!(err, Error::EmptyReport(_)), "{err}");
}

fn scored_query() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0u8..=4, n),
        )
    })
}

proptest! {
    #[test]
    fn increasing_transform_keeps_pnr((scores, ys) in scored_query()) {
        let y = labels(&ys);
        let moved: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(brute_force_pairs(&scores, &y), brute_force_pairs(&moved, &y));
        prop_assert_eq!(pnr_query(&scores, &y).unwrap(), pnr_query(&moved, &y).unwrap());
    }

    #[test]
    fn negating_scores_inverts_pnr((scores, ys) in scored_query()) {
        let y = labels(&ys);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        if let (Ok(a), Ok(b)) = (pnr_query(&scores, &y).unwrap(), pnr_query(&negated, &y).unwrap()) {
            if a > 0.0 {
                prop_assert!((a * b - 1.0).abs() < 1e-12, "{a} * {b}");
            }
        }
    }

    #[test]
    fn raising_a_gain_raises_dcg(gains in prop::collection::vec(0.0..15.0f64, 1..20), pos in any::<prop::sample::Index>(), bump in 0.01..5.0f64) {
        let i = pos.index(gains.len());
        let mut raised = gains.clone();
        raised[i] += bump;
        prop_assert!(dcg(&raised, None) > dcg(&gains, None));
    }

    #[test]
    fn larger_gain_first_raises_dcg(gains in prop::collection::vec(0.0..15.0f64, 2..20), pos in any::<prop::sample::Index>()) {
        let i = pos.index(gains.len() - 1);
        prop_assume!(gains[i] < gains[i + 1]);
        let mut swapped = gains.clone();
        swapped.swap(i, i + 1);
        prop_assert!(dcg(&swapped, None) > dcg(&gains, None));
    }

    #[test]
    fn comparison_gains_are_antisymmetric(a in 0u64..1000, b in 0u64..1000, t in 0u64..1000) {
        prop_assume!(a + b + t > 0);
        prop_assert_eq!(delta_ab(a, b, t).unwrap(), -delta_ab(b, a, t).unwrap());
        prop_assert_eq!(delta_gsb(a, t, b).unwrap(), -delta_gsb(b, t, a).unwrap());
    }
}
