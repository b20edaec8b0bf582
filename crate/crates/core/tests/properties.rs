use perpscale::affinity::{build_affinities, AffinityMode};
use perpscale::dataset::{draw_nested_samples, sample_size};
use perpscale::metrics::{knn_overlap, silhouette};
use perpscale::pipeline::{budget_plan, Budget};
use perpscale::scaling::{scale_perplexity, Rounding, ScalingRule};
use perpscale::synthetic::isotropic_gaussian;
use perpscale::Embedding;
use proptest::prelude::*;

fn embedding_strategy(n: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-50.0..50.0f64, 2 * n).prop_map(move |c| Embedding::new(c, 2, (0..n as u64).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nested_levels_are_subsets_with_exact_sizes(n in 10usize..400, seed in any::<u64>(), raw in prop::collection::vec(0.05f64..1.0, 1..5)) {
        let mut rates = raw;
        rates.sort_by(|a, b| b.total_cmp(a));
        rates.dedup();
        let ds = isotropic_gaussian(n, 2, 1).unwrap();
        match draw_nested_samples(&ds, &rates, seed) {
            Ok(plan) => {
                for (k, level) in plan.levels.iter().enumerate() {
                    prop_assert_eq!(level.len(), sample_size(n, rates[k]));
                    prop_assert!(level.windows(2).all(|w| w[0] < w[1]));
                    if k > 0 {
                        prop_assert!(level.iter().all(|id| plan.levels[k - 1].binary_search(id).is_ok()));
                    }
                }
            }
            Err(_) => prop_assert!(sample_size(n, *rates.last().unwrap()) < 2),
        }
    }

    #[test]
    fn joint_probabilities_are_symmetric_and_normalized(n in 8usize..60, seed in 0u64..1000, frac in 0.1f64..0.6, dense in any::<bool>()) {
        let ds = isotropic_gaussian(n, 3, seed).unwrap();
        let per = 1.5 + frac * (n as f64 / 3.0);
        let mode = if dense { AffinityMode::Dense } else { AffinityMode::Sparse };
        let aff = build_affinities(&ds, per, mode).unwrap();
        prop_assert!((aff.total() - 1.0).abs() <= 1e-9);
        for (i, j, p) in aff.entries() {
            prop_assert!(p >= 0.0 && i != j);
            prop_assert_eq!(p, aff.get(j, i));
        }
    }

    #[test]
    fn exact_scaling_composes(p in 2.0f64..500.0, n0 in 1000usize..100_000, n1 in 1000usize..100_000, n2 in 1000usize..100_000) {
        prop_assume!(p < n0 as f64);
        let direct = scale_perplexity(&ScalingRule::new(p, n0, Rounding::None).unwrap(), n2);
        let mid = scale_perplexity(&ScalingRule::new(p, n0, Rounding::None).unwrap(), n1);
        if let (Ok(direct), Ok(mid)) = (direct, mid) {
            if let Ok(rule) = ScalingRule::new(mid, n1, Rounding::None) {
                let composed = scale_perplexity(&rule, n2).unwrap();
                prop_assert!((composed - direct).abs() <= 4.0 * f64::EPSILON * direct);
            }
        }
    }

    #[test]
    fn larger_budgets_never_shrink_the_rate(n in 100usize..1_000_000, per in 2.0f64..500.0, a in 1e3f64..1e12, b in 1e3f64..1e12, dense in any::<bool>()) {
        let mode = if dense { AffinityMode::Dense } else { AffinityMode::Sparse };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = budget_plan(n, per, &Budget { max_bytes: lo, bytes_per_entry: 12.0, mode });
        let large = budget_plan(n, per, &Budget { max_bytes: hi, bytes_per_entry: 12.0, mode });
        if small.feasible {
            prop_assert!(large.feasible && large.rate >= small.rate);
        }
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(a in embedding_strategy(40), b in embedding_strategy(40), k in 1usize..10) {
        let ab = knn_overlap(&a, &b, k).unwrap().knn_overlap;
        let ba = knn_overlap(&b, &a, k).unwrap().knn_overlap;
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn silhouette_is_bounded(e in embedding_strategy(30), labels in prop::collection::vec(0i64..3, 30)) {
        if let Ok(s) = silhouette(&e, &labels) {
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
