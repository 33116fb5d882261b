//! Property tests over random instances.

mod common;

use common::metric::{brute_ndcg, brute_rank};
use common::oracle::{instance, shape_contract};
use mdst::ader::{rank_of, ranking};
use mdst::train_eval::{compute_ndcg, LrSchedule};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_normalised_and_fusion_is_exact(seed in any::<u64>()) {
        let inst = instance(seed);
        prop_assert_eq!(shape_contract(&inst), Ok(()));
    }

    #[test]
    fn rank_agrees_with_sorting(scores in prop::collection::vec(-3i8..3, 1..40), pick in any::<prop::sample::Index>()) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let gt = pick.index(scores.len());
        let r = rank_of(&scores, gt);
        prop_assert!((1..=scores.len()).contains(&r));
        prop_assert_eq!(r, brute_rank(&scores, gt));
        prop_assert_eq!(ranking(&scores)[r - 1], gt);
    }

    #[test]
    fn ndcg_is_a_fraction(
        pairs in prop::collection::vec((-5i8..5, prop::sample::select(vec![0.0, 0.5, 1.0])), 1..30),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let relevance: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let got = compute_ndcg(&ranking(&scores), &relevance);
        let expect = brute_ndcg(&scores, &relevance);
        prop_assert_eq!(got.is_some(), expect.is_some());
        if let (Some(a), Some(b)) = (got, expect) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_rises_then_falls(total in 2usize..5000, warm in 0.0f64..0.9) {
        let s = LrSchedule::new(total, warm, 1e-3, 5e-5).unwrap();
        let lrs: Vec<f64> = (0..=total).map(|t| s.lr(t)).collect();
        for t in 1..=total {
            if t <= s.warmup_steps {
                prop_assert!(lrs[t] > lrs[t - 1]);
            } else {
                prop_assert!(lrs[t] < lrs[t - 1]);
            }
            prop_assert!(lrs[t] <= 1e-3 + 1e-18 && lrs[t] >= 5e-5 - 1e-18 || t <= s.warmup_steps);
        }
        prop_assert!((lrs[total] - 5e-5).abs() < 1e-15);
    }
}

#[test]
fn standard_schedule_is_piecewise_linear() {
    let cfg = mdst::train_eval::TrainConfig::standard(mdst::config::ModelConfig::desk(100, 19, 3));
    let s = cfg.schedule(5000).unwrap();
    let (total, warm) = (s.total_steps, s.warmup_steps);
    assert_eq!(warm, (0.2 * total as f64).round() as usize);
    for t in 0..=total {
        let expect = if t <= warm {
            1e-3 * t as f64 / warm as f64
        } else {
            1e-3 + (5e-5 - 1e-3) * (t - warm) as f64 / (total - warm) as f64
        };
        assert!((s.lr(t) - expect).abs() <= 1e-15, "step {t}");
    }
}
