use kneesight::rng::stream;
use kneesight::stats::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn groups_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 3..12), 2..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kruskal_wallis_invariant_under_monotone_maps(groups in groups_strategy()) {
        let a = group_test(&groups, GroupTest::KruskalWallis).unwrap();
        let mapped: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| (v / 10.0).exp() + 3.0 * v).collect()).collect();
        let b = group_test(&mapped, GroupTest::KruskalWallis).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * a.statistic.max(1.0));
        prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
    }

    #[test]
    fn p_values_are_probabilities(groups in groups_strategy()) {
        for t in [GroupTest::AnovaF, GroupTest::KruskalWallis] {
            if let Ok(r) = group_test(&groups, t) {
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }
    }

    #[test]
    fn correlations_bounded_and_symmetric(pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        for m in [CorrMethod::Pearson, CorrMethod::Spearman] {
            if let (Ok(a), Ok(b)) = (correlation(&x, &y, m), correlation(&y, &x, m)) {
                prop_assert!(a.estimate.abs() <= 1.0 && (a.estimate - b.estimate).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bootstrap_interval_contains_estimate(seed in 0u64..200) {
        let mut rng = stream(seed, 9);
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        let r = bootstrap_ci(&x, &y, CorrMethod::Spearman, 200, 0.95, seed).unwrap();
        let (lo, hi) = (r.ci_low.unwrap(), r.ci_high.unwrap());
        prop_assert!(lo <= r.estimate && r.estimate <= hi);
    }

    #[test]
    fn cliffs_delta_antisymmetric(a in proptest::collection::vec(-5.0f64..5.0, 1..20), b in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
        prop_assert!((cliffs_delta(&a, &b) + cliffs_delta(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in 0u64..300, k in 1usize..5) {
        let mut rng = stream(seed, 3);
        let m: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let r = kmeans(&m, k, seed).unwrap();
        prop_assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
}

#[test]
fn pearson_interval_coverage_is_near_nominal() {
    // 200 trials of n = 250 from a bivariate normal with rho = 0.8
    let rho: f64 = 0.8;
    let covered = (0..200u64)
        .filter(|&t| {
            let mut rng = stream(400, t);
            let (x, y): (Vec<f64>, Vec<f64>) = (0..250)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    (a, rho * a + (1.0 - rho * rho).sqrt() * b)
                })
                .unzip();
            let r = bootstrap_ci(&x, &y, CorrMethod::Pearson, 500, 0.95, t).unwrap();
            r.ci_low.unwrap() <= rho && rho <= r.ci_high.unwrap()
        })
        .count();
    println!("coverage {covered}/200");
    assert!((176..=200).contains(&covered));
}
