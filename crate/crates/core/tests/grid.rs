use hflow_core::grid::{estimate_makespan, reference_ranking, stub_metric, GridSpec};
use proptest::prelude::*;

#[test]
fn stub_metric_is_close_to_uniform() {
    let mut xs: Vec<f64> = (0..10_000u64).map(|i| stub_metric(1, &format!("net{}/hp{}/ds0", i / 5, i % 7), i % 5)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| f64::max((i as f64 + 1.0) / n - x, x - i as f64 / n))
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS statistic {ks}");
    assert!(xs[0] >= 0.0 && xs[xs.len() - 1] < 1.0);
}

#[test]
fn reference_ranking_is_sorted_and_complete() {
    let spec = GridSpec::synthetic(3, 2, 2, 4);
    let ranking = reference_ranking(&spec, 3);
    assert_eq!(ranking.len(), 12);
    assert!(ranking.windows(2).all(|w| w[0].mean_metric >= w[1].mean_metric));
    assert!(ranking.iter().all(|r| r.fold_metrics.len() == 4));
    assert!(reference_ranking(&GridSpec::synthetic(0, 2, 2, 4), 3).is_empty());
}

proptest! {
    #[test]
    fn estimate_is_monotone(v in 0u64..5000, t in 0.1f64..100.0, g in 1u64..2000, dv in 0u64..100, dg in 0u64..100) {
        let base = estimate_makespan(v, t, g);
        prop_assert!(estimate_makespan(v, t, g + dg) <= base);
        prop_assert!(estimate_makespan(v + dv, t, g) >= base);
        prop_assert!(estimate_makespan(v, t * 2.0, g) >= base);
        prop_assert_eq!(estimate_makespan(v, t, g), v.div_ceil(g) as f64 * t);
    }
}
