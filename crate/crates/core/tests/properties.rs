//! Randomized invariants over the numeric core and the evaluation layer.

use proptest::prelude::*;

use causalsum::eval::{f1, segment_scores, select_summary, SegmentScores, SummarySelection};
use causalsum::graph::Graph;
use causalsum::synth::{normal_quantile, textual_intervention};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-8.0..8.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(data, vec![rows, cols]).unwrap();
        let s = g.softmax_rows(x).unwrap();
        let out = g.data(s);
        for r in 0..rows {
            let row = &out[r * cols..(r + 1) * cols];
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(a in finite_vec(6), b in finite_vec(6), c in finite_vec(6)) {
        let mut g = Graph::new();
        let ta = g.constant(a, vec![2, 3]).unwrap();
        let tb = g.constant(b, vec![3, 2]).unwrap();
        let tc = g.constant(c, vec![2, 3]).unwrap();
        let ab = g.matmul(ta, tb).unwrap();
        let left = g.matmul(ab, tc).unwrap();
        let bc = g.matmul(tb, tc).unwrap();
        let right = g.matmul(ta, bc).unwrap();
        for (l, r) in g.data(left).iter().zip(g.data(right)) {
            prop_assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn topk_rows_give_convex_weights(cols in 1usize..7, k in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let data: Vec<f64> = (0..cols).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(data, vec![1, cols]).unwrap();
        let m = g.topk_mask(x, k).unwrap();
        let s = g.softmax_rows(m).unwrap();
        let row = g.data(s);
        prop_assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), k.min(cols));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn budget_is_never_violated(
        scores in prop::collection::vec(-5.0f64..5.0, 1..12),
        costs in prop::collection::vec(1usize..4, 1..12),
        budget in 0usize..30,
    ) {
        let n = scores.len().min(costs.len());
        let seg = SegmentScores {
            scores: scores[..n].to_vec(),
            segment_length_frames: 2,
            frame_counts: costs[..n].to_vec(),
        };
        let sel = select_summary(&seg, budget);
        prop_assert!(sel.total_selected_frames <= budget);
        let frames: usize = sel
            .selected
            .iter()
            .zip(&seg.frame_counts)
            .filter(|(s, _)| **s)
            .map(|(_, c)| c)
            .sum();
        prop_assert_eq!(frames, sel.total_selected_frames);
    }

    #[test]
    fn f1_is_symmetric_and_bounded(
        sel_a in prop::collection::vec(any::<bool>(), 1..10),
        sel_b in prop::collection::vec(any::<bool>(), 1..10),
    ) {
        let n = sel_a.len().min(sel_b.len());
        let counts = vec![2usize; n];
        let mk = |sel: &[bool]| SummarySelection {
            selected: sel[..n].to_vec(),
            budget_frames: 2 * n,
            total_selected_frames: sel[..n].iter().filter(|s| **s).count() * 2,
        };
        let ab = f1(&mk(&sel_a), &mk(&sel_b), &counts).unwrap();
        let ba = f1(&mk(&sel_b), &mk(&sel_a), &counts).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        // with equal per-segment frame counts F1 is symmetric outright
        prop_assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn segment_broadcast_is_idempotent(scores in prop::collection::vec(-3.0f64..3.0, 1..30), seg_len in 1usize..5) {
        let s1 = segment_scores(&scores, seg_len).unwrap();
        let broadcast: Vec<f64> = s1
            .scores
            .iter()
            .zip(&s1.frame_counts)
            .flat_map(|(&v, &c)| std::iter::repeat_n(v, c))
            .collect();
        let s2 = segment_scores(&broadcast, seg_len).unwrap();
        for (a, b) in s1.scores.iter().zip(&s2.scores) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn word_drop_keeps_an_ordered_subsequence(tokens in prop::collection::vec(0usize..50, 1..12), seed in any::<u64>(), p in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = textual_intervention(&tokens, p, &mut rng);
        prop_assert!(!out.is_empty());
        prop_assert!(out.len() <= tokens.len());
        // every kept token appears in the original
        prop_assert!(out.iter().all(|t| tokens.contains(t)));
    }

    #[test]
    fn normal_quantile_is_monotone(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(normal_quantile(lo) <= normal_quantile(hi));
    }
}
