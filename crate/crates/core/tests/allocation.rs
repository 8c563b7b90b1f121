//! Max-min fairness of the per-query budget split.

use jarvis_core::runtime::allocate_budget;
use proptest::prelude::*;

/// Water-filling: raise a common level until the budget runs out.
fn water_fill(total: f64, demands: &[f64]) -> Vec<f64> {
    let level_use = |level: f64| demands.iter().map(|d| d.min(level)).sum::<f64>();
    if demands.is_empty() {
        return vec![];
    }
    let max = demands.iter().cloned().fold(0.0, f64::max);
    if level_use(max) <= total {
        return demands.to_vec();
    }
    let (mut lo, mut hi) = (0.0, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if level_use(mid) <= total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    demands.iter().map(|d| d.min(lo)).collect()
}

proptest! {
    #[test]
    fn allocation_is_max_min_fair(
        total in 0.0f64..4.0,
        demands in prop::collection::vec(0.0f64..2.0, 0..12),
    ) {
        let alloc = allocate_budget(total, &demands);
        prop_assert_eq!(alloc.len(), demands.len());
        let sum: f64 = alloc.iter().sum();
        prop_assert!(sum <= total + 1e-9);
        for (a, d) in alloc.iter().zip(&demands) {
            prop_assert!(*a >= 0.0 && *a <= d + 1e-12);
        }
        // Work conserving: budget is left over only when everyone is served.
        if sum < total - 1e-9 {
            prop_assert!(alloc.iter().zip(&demands).all(|(a, d)| (a - d).abs() < 1e-9));
        }
        // Nobody can gain without taking from someone no better off.
        for i in 0..alloc.len() {
            if alloc[i] < demands[i] - 1e-9 {
                for j in 0..alloc.len() {
                    prop_assert!(alloc[i] >= alloc[j] - 1e-9, "{:?} for {:?}", alloc, demands);
                }
            }
        }
        let oracle = water_fill(total, &demands);
        for (a, o) in alloc.iter().zip(&oracle) {
            prop_assert!((a - o).abs() < 1e-7, "{:?} vs {:?}", alloc, oracle);
        }
    }

    #[test]
    fn unbounded_demands_split_evenly(total in 0.0f64..4.0, n in 1usize..10) {
        let alloc = allocate_budget(total, &vec![f64::INFINITY; n]);
        for a in alloc {
            prop_assert!((a - total / n as f64).abs() < 1e-12);
        }
    }
}
