use kneesight::features::{detect_eol, EOL_THRESHOLD};
use kneesight::predict::fit_least_squares;
use kneesight::rng::stream;
use kneesight::synth::{gen_trajectory, TrajectorySpec};
use rand::Rng;

fn random_spec(i: u64) -> TrajectorySpec {
    let mut rng = stream(77, i);
    TrajectorySpec {
        linear_rate: rng.gen_range(0.0..0.01),
        knee_cycle: rng.gen_bool(0.8).then(|| rng.gen_range(0..60)),
        accel: rng.gen_range(0.0..0.005),
        exponent: if rng.gen_bool(0.7) { 2.0 } else { rng.gen_range(1.0..3.0) },
        length: rng.gen_range(1..150),
        ..TrajectorySpec::default()
    }
}

#[test]
fn analytic_eol_matches_detection_on_1000_specs() {
    for i in 0..1000 {
        let spec = random_spec(i);
        let g = gen_trajectory(&spec, "s", "t").unwrap();
        assert_eq!(g.trajectory.eol_cycle, detect_eol(&g.trajectory, EOL_THRESHOLD), "{spec:?}");
    }
}

#[test]
fn noiseless_branches_refit_exactly() {
    for i in 0..200 {
        let mut spec = random_spec(i);
        spec.exponent = 2.0;
        let Some(ks) = spec.knee_cycle else { continue };
        spec.length = 80;
        let g = gen_trajectory(&spec, "s", "t").unwrap();
        // stay clear of the clip at zero
        let pts: Vec<(usize, f64)> = g.trajectory.points.iter().copied().filter(|p| p.1 > 0.05).collect();
        if pts.len() < 4 {
            continue;
        }
        let x: Vec<Vec<f64>> = pts
            .iter()
            .map(|&(k, _)| vec![k as f64, (k as f64 - ks as f64).max(0.0).powi(2)])
            .collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (c, coef) = fit_least_squares(&x, &y).unwrap();
        let resid = x
            .iter()
            .zip(&y)
            .map(|(r, t)| (c + coef[0] * r[0] + coef[1] * r[1] - t).abs())
            .fold(0.0, f64::max);
        assert!(resid < 1e-12, "{spec:?}: residual {resid:e}");
        assert!((c - 1.0).abs() < 1e-9 && (coef[0] + spec.linear_rate).abs() < 1e-9);
        if x.iter().any(|r| r[1] > 0.0) {
            assert!((coef[1] + spec.accel).abs() < 1e-9);
        }
    }
}
