//! Ranking and rating-error metrics, and the all-ranking evaluation protocol
//! with warm/cold user segments.

mod metrics;
mod protocol;

pub use metrics::{
    average_precision, average_precision_thresholds, mae, ndcg_at_k, precision_recall_at_k, rmse,
    RankedList,
};
pub use protocol::{
    default_segments, evaluate_all_ranking, mean_recall_at_k, EvalConfig, EvalReport, MetricsAtK,
    ScoreModel, Segment, SegmentReport, RATING_PROTOCOL,
};

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    use proptest::prelude::*;

    fn arb_scores() -> impl Strategy<Value = (Vec<f64>, HashSet<usize>, HashSet<usize>)> {
        (3usize..20).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::hash_set(0..n, 1..n),
                proptest::collection::hash_set(0..n, 0..n / 2),
            )
                .prop_map(|(scores, relevant, train)| {
                    let relevant: HashSet<usize> = relevant.difference(&train).copied().collect();
                    (scores, relevant, train)
                })
                .prop_filter("needs a relevant candidate", |(_, relevant, _)| !relevant.is_empty())
        })
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_recall_grows((scores, relevant, train) in arb_scores()) {
            let ranked = RankedList::from_scores(0, &scores, &train);
            let mut last_recall = 0.0;
            for k in 1..=ranked.len() {
                let (p, r) = precision_recall_at_k::<f64>(&ranked.items, &relevant, k).unwrap().unwrap();
                let n = ndcg_at_k(&ranked.items, &relevant, k).unwrap().unwrap();
                let ap = average_precision::<f64>(&ranked.items, &relevant, k).unwrap().unwrap();
                for v in [p, r, n, ap] {
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                }
                prop_assert!(r >= last_recall);
                last_recall = r;
            }
        }

        #[test]
        fn perfect_ranking_has_unit_ndcg((scores, relevant, train) in arb_scores()) {
            let boosted: Vec<f64> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| if relevant.contains(&i) { s + 100.0 } else { *s })
                .collect();
            let ranked = RankedList::from_scores(0, &boosted, &train);
            let n = ndcg_at_k(&ranked.items, &relevant, relevant.len()).unwrap().unwrap();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }

        #[test]
        fn increasing_transform_keeps_the_ranking((scores, _, train) in arb_scores(), a in 0.1f64..4.0, b in -3.0f64..3.0) {
            let transformed: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
            prop_assert_eq!(
                RankedList::from_scores(0, &scores, &train),
                RankedList::from_scores(0, &transformed, &train)
            );
        }

        #[test]
        fn hit_position_form_matches_threshold_form((scores, relevant, train) in arb_scores(), k in 1usize..25) {
            let ranked = RankedList::from_scores(0, &scores, &train);
            let a = average_precision::<f64>(&ranked.items, &relevant, k).unwrap().unwrap();
            let b = average_precision_thresholds::<f64>(&ranked.items, &relevant, k).unwrap().unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
