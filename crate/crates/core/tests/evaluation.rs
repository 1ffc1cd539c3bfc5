mod common;

use binloop::dataset::ground_truth_pairs;
use binloop::evaluation::score;
use binloop::{GroundTruthPairs, Trajectory};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use std::collections::BTreeSet;

fn pairs_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    proptest::collection::vec((1usize..200, 0usize..200), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| (a.max(b) + 1, a.min(b)))
            .collect()
    })
}

proptest! {
    #[test]
    fn report_is_order_independent(truth in pairs_strategy(), dets in pairs_strategy(), tol in 0usize..4, seed in any::<u64>()) {
        let truth: GroundTruthPairs = truth.into_iter().collect();
        let mut shuffled = dets.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(score(dets, &truth, tol), score(shuffled, &truth, tol));
    }

    #[test]
    fn strict_mode_is_set_intersection(truth in pairs_strategy(), dets in pairs_strategy()) {
        let truth_set: BTreeSet<_> = truth.iter().copied().collect();
        let det_set: BTreeSet<_> = dets.iter().copied().collect();
        let hits = truth_set.intersection(&det_set).count();
        let report = score(dets, &truth_set.iter().copied().collect(), 0);
        prop_assert_eq!(report.true_positives, hits);
        prop_assert_eq!(report.truth_hits, hits);
        prop_assert_eq!(report.false_positives, det_set.len() - hits);
    }

    #[test]
    fn false_positive_never_raises_precision(truth in pairs_strategy(), dets in pairs_strategy(), tol in 0usize..4) {
        let truth: GroundTruthPairs = truth.into_iter().collect();
        let before = score(dets.clone(), &truth, tol);
        // (1000, 500) is far from every generated truth pair
        let mut with_fp = dets.clone();
        with_fp.push((1000, 500));
        let after = score(with_fp, &truth, tol);
        prop_assert!(after.precision.unwrap() <= before.precision.unwrap_or(100.0));
        if let Some(&tp) = truth.pairs.iter().next() {
            let mut with_tp = dets;
            with_tp.push(tp);
            let more = score(with_tp, &truth, tol);
            prop_assert!(more.recall_rate.unwrap() >= before.recall_rate.unwrap());
        }
    }

    #[test]
    fn ground_truth_matches_definition(points in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0), 1..40), d_gt in 0.1f64..4.0, gap in 1usize..6) {
        let traj = Trajectory { positions: points.iter().map(|&(x, y, z)| [x, y, z]).collect() };
        let gt = ground_truth_pairs(&traj, d_gt, gap);
        for i in 0..points.len() {
            for j in 0..points.len() {
                let p = traj.positions[i];
                let q = traj.positions[j];
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                let expected = i >= j + gap && d <= d_gt;
                // squared comparison can differ from sqrt only within an ulp of the radius
                if (d - d_gt).abs() > 1e-12 {
                    prop_assert_eq!(gt.contains(i, j), expected);
                }
            }
        }
    }
}
