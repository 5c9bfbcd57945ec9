use kneesight::predict::*;
use kneesight::rng::stream;
use kneesight::synth::{gen_trajectory, TrajectorySpec};
use proptest::prelude::*;
use rand::Rng;

fn random_cell(id: String, rng: &mut impl Rng) -> CellData {
    let spec = TrajectorySpec {
        linear_rate: rng.gen_range(0.002..0.006),
        knee_cycle: Some(rng.gen_range(5..30)),
        accel: rng.gen_range(0.0005..0.003),
        noise_sd: 0.002,
        length: rng.gen_range(25..70),
        seed: rng.gen(),
        ..TrajectorySpec::default()
    };
    let g = gen_trajectory(&spec, &id, "t").unwrap();
    CellData {
        trajectory: g.trajectory,
        rows: g.rows,
    }
}

/// Rewrites every cycle past the window with garbage.
fn tamper_after(cell: &CellData, n: usize, rng: &mut impl Rng) -> CellData {
    let mut c = cell.clone();
    let last = c.trajectory.points[n - 1].0;
    for p in c.trajectory.points.iter_mut().filter(|p| p.0 > last) {
        p.1 = rng.gen_range(-5.0..5.0);
    }
    for r in c.rows.iter_mut().filter(|r| r.cycle_index > last) {
        r.mean_current_a = rng.gen_range(-50.0..50.0);
        r.mean_temp_c = Some(rng.gen_range(-50.0..150.0));
        r.q_ah = rng.gen_range(0.0..9.0);
    }
    c.trajectory.eol_cycle = None;
    c.trajectory.knee_cycle = Some(rng.gen_range(0..500));
    c
}

#[test]
fn early_features_ignore_every_later_cycle() {
    let cfg = DatasetConfig {
        early_knee: false,
        ..DatasetConfig::default()
    };
    let mut violations = 0;
    for i in 0..300u64 {
        let mut rng = stream(31, i);
        let cell = random_cell(format!("c{i}"), &mut rng);
        let n = [5, 10, 20][rng.gen_range(0..3)];
        let clean = early_features(&cell, n, &cfg).unwrap();
        let dirty = early_features(&tamper_after(&cell, n, &mut rng), n, &cfg).unwrap();
        let prefix_only = CellData {
            trajectory: cell.trajectory.prefix(n),
            rows: cell.rows.iter().filter(|r| r.cycle_index < n).cloned().collect(),
        };
        let recomputed = early_features(&prefix_only, n, &cfg).unwrap();
        violations += usize::from(clean != dirty || clean != recomputed);
    }
    assert_eq!(violations, 0);
}

#[test]
fn early_knee_feature_is_prefix_only() {
    let cfg = DatasetConfig::default();
    for i in 0..10u64 {
        let mut rng = stream(32, i);
        let cell = random_cell(format!("c{i}"), &mut rng);
        let clean = early_features(&cell, 10, &cfg).unwrap();
        assert_eq!(clean, early_features(&tamper_after(&cell, 10, &mut rng), 10, &cfg).unwrap());
    }
}

#[test]
fn no_cell_spans_two_folds() {
    let cfg = DatasetConfig {
        target: TargetKind::Soh,
        early_knee: false,
        ..DatasetConfig::default()
    };
    let mut rng = stream(33, 0);
    let cells: Vec<CellData> = (0..40).map(|i| random_cell(format!("c{i}"), &mut rng)).collect();
    let ds = make_dataset(&cells, &cfg).unwrap();
    for seed in 0..200u64 {
        let k = 2 + (seed as usize % 9);
        let folds = cell_level_split(&ds, k, seed).unwrap();
        let mut seen = std::collections::HashMap::new();
        for (row, f) in ds.rows.iter().zip(&folds) {
            assert_eq!(*seen.entry(row.cell_id.as_str()).or_insert(*f), *f);
        }
        // temporal order inside each fold follows the dataset
        for (train, test) in fold_indices(&folds, k) {
            assert!(train.windows(2).all(|w| w[0] < w[1]) && test.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluate_is_permutation_symmetric(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30), seed in 0u64..1000) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut stream(seed, 0));
        let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let y2: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let (Ok(a), Ok(b)) = (evaluate(&p, &y), evaluate(&p2, &y2)) {
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(1.0);
            prop_assert!(close(a.rmse, b.rmse) && close(a.mae, b.mae) && close(a.r2, b.r2));
        }
    }

    #[test]
    fn forest_is_tree_order_invariant(seed in 0u64..500, perm_seed in 0u64..500) {
        let mut rng = stream(seed, 1);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1] + rng.gen_range(-0.1..0.1)).collect();
        let model = fit_forest(&x, &y, &ForestConfig { n_trees: 15, seed, ..Default::default() }).unwrap();
        let mut shuffled = model.clone();
        rand::seq::SliceRandom::shuffle(shuffled.trees.as_mut_slice(), &mut stream(perm_seed, 0));
        for q in x.iter().take(5) {
            prop_assert_eq!(model.predict_with_variance(q).unwrap(), shuffled.predict_with_variance(q).unwrap());
        }
    }

    #[test]
    fn forest_sigma_is_nonnegative(seed in 0u64..500) {
        let mut rng = stream(seed, 2);
        let x: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = fit_forest(&x, &y, &ForestConfig { n_trees: 10, seed, ..Default::default() }).unwrap();
        prop_assert!(model.predict_with_variance(&[rng.gen_range(-3.0..3.0)]).unwrap().sigma >= 0.0);
    }
}
