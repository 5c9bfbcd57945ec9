//! Autodiff against finite differences.

use kneesight::inr::{InrConfig, InrModel, TrainingSample, Variant};
use kneesight::rng::stream;
use rand::Rng;

fn small(variant: Variant, input_dim: usize, seed: u64) -> InrModel {
    InrModel::new(InrConfig {
        variant,
        input_dim,
        hidden_layers: 2,
        hidden_width: 12,
        fourier_features: 8,
        rbf_centers: 8,
        dropout_p: 0.0,
        seed,
        ..InrConfig::default()
    })
    .unwrap()
}

#[test]
fn parameter_gradient_matches_central_differences() {
    for variant in Variant::ALL {
        let mut model = small(variant, 2, 11);
        let mut rng = stream(5, 0);
        let samples: Vec<TrainingSample> = (0..16)
            .map(|_| {
                TrainingSample::new(
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    vec![rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let (_, grad) = model.loss_gradient(&samples).unwrap();
        let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        let h = 1e-6;
        for i in 0..model.theta.len() {
            let t = model.theta[i];
            model.theta[i] = t + h;
            let up = model.loss(&samples).unwrap();
            model.theta[i] = t - h;
            let down = model.loss(&samples).unwrap();
            model.theta[i] = t;
            let fd = (up - down) / (2.0 * h);
            let err = (grad[i] - fd).abs() / grad[i].abs().max(1e-3 * scale);
            assert!(
                err < 1e-5,
                "{}: theta[{i}] analytic {} vs fd {fd} ({err:e})",
                variant.name(),
                grad[i]
            );
        }
    }
}

/// Fourth-order central stencils for the first and second derivative.
fn stencils(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (m2, m1, c, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
    (d1, d2)
}

#[test]
fn input_derivatives_match_finite_differences_for_every_variant() {
    for variant in Variant::ALL {
        let model = small(variant, 1, 3);
        let mut rng = stream(8, variant as u64);
        let xs: Vec<f64> = (0..100).map(|_| rng.gen_range(-0.95..0.95)).collect();
        let exact: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| (model.derivative(&[x], 1, 0).unwrap()[0], model.derivative(&[x], 2, 0).unwrap()[0]))
            .collect();
        let fd: Vec<(f64, f64)> = xs.iter().map(|&x| stencils(|t| model.predict(&[t]).unwrap(), x, 2e-4)).collect();
        // relative to the magnitude at the point, floored at 1% of the RMS
        // over all points so zero crossings do not divide by ~0
        let rms = |k: usize| (fd.iter().map(|p| if k == 1 { p.0 * p.0 } else { p.1 * p.1 }).sum::<f64>() / 100.0).sqrt();
        let (r1, r2) = (rms(1), rms(2));
        for ((a, f), x) in exact.iter().zip(&fd).zip(&xs) {
            let e1 = (a.0 - f.0).abs() / a.0.abs().max(1e-2 * r1);
            let e2 = (a.1 - f.1).abs() / a.1.abs().max(1e-2 * r2);
            assert!(e1 < 1e-4, "{} d1 at {x}: {} vs {} ({e1:e})", variant.name(), a.0, f.0);
            assert!(e2 < 1e-4, "{} d2 at {x}: {} vs {} ({e2:e})", variant.name(), a.1, f.1);
        }
    }
}

#[test]
fn derivative_with_respect_to_second_coordinate() {
    let model = small(Variant::Fourier, 2, 4);
    let (x0, x1) = (0.2, -0.4);
    let (d1, d2) = stencils(|t| model.predict(&[x0, t]).unwrap(), x1, 2e-4);
    let a1 = model.derivative(&[x0, x1], 1, 1).unwrap()[0];
    let a2 = model.derivative(&[x0, x1], 2, 1).unwrap()[0];
    assert!((a1 - d1).abs() <= 1e-6 * a1.abs().max(1.0));
    assert!((a2 - d2).abs() <= 1e-4 * a2.abs().max(1.0));
}
