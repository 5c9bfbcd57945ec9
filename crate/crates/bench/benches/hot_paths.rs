use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

use kneesight::inr::{InrConfig, InrModel, TrainingSample, Variant};
use kneesight::knee::{detect_knee, KneeConfig};
use kneesight::predict::{fit_forest, ForestConfig};
use kneesight::reliability::{fit_lifetime, Family};
use kneesight::rng::stream;
use kneesight::stats::{bootstrap_ci, CorrMethod};
use kneesight::synth::{gen_trajectory, gen_weibull, TrajectorySpec};

fn knee(c: &mut Criterion) {
    let spec = TrajectorySpec {
        noise_sd: 0.002,
        knee_cycle: Some(30),
        accel: 0.005,
        length: 40,
        ..TrajectorySpec::default()
    };
    let traj = gen_trajectory(&spec, "c", "b").unwrap().trajectory;
    let cfg = KneeConfig::default();
    c.bench_function("detect_knee/40 cycles", |b| b.iter(|| detect_knee(black_box(&traj), &cfg).unwrap()));
}

fn inr(c: &mut Criterion) {
    let samples: Vec<TrainingSample> = (0..100)
        .map(|k| TrainingSample::new(vec![k as f64], vec![1.0 - 0.002 * k as f64]))
        .collect();
    for variant in Variant::ALL {
        let model = InrModel::new(InrConfig::capacity(variant)).unwrap();
        c.bench_function(&format!("inr loss_gradient/{}/100 points", variant.name()), |b| {
            b.iter(|| model.loss_gradient(black_box(&samples)).unwrap())
        });
        c.bench_function(&format!("inr second derivative/{}", variant.name()), |b| {
            b.iter(|| model.derivative(black_box(&[50.0]), 2, 0).unwrap())
        });
    }
    let cfg = InrConfig {
        epochs: 50,
        ..InrConfig::capacity(Variant::Siren)
    };
    c.bench_function("inr train/siren/50 epochs", |b| {
        b.iter_batched(
            || InrModel::new(cfg.clone()).unwrap(),
            |mut m| m.train(&samples, &[]).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn forest(c: &mut Criterion) {
    let mut rng = stream(1, 0);
    let x: Vec<Vec<f64>> = (0..500).map(|_| (0..12).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + r[1] * r[2]).collect();
    let cfg = ForestConfig {
        n_trees: 100,
        ..ForestConfig::default()
    };
    c.bench_function("forest fit/500x12/100 trees", |b| {
        b.iter(|| fit_forest(black_box(&x), &y, &cfg).unwrap())
    });
}

fn reliability_and_stats(c: &mut Criterion) {
    let sample = gen_weibull(2.353, 16.509, 10_000, 1).unwrap();
    c.bench_function("weibull mle/10k", |b| {
        b.iter(|| fit_lifetime(Family::Weibull, black_box(&sample)).unwrap())
    });
    let mut rng = stream(2, 0);
    let x: Vec<f64> = (0..250).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    c.bench_function("bootstrap pearson/n 250/B 1000", |b| {
        b.iter(|| bootstrap_ci(black_box(&x), &y, CorrMethod::Pearson, 1000, 0.95, 3).unwrap())
    });
}

criterion_group!(benches, knee, inr, forest, reliability_and_stats);
criterion_main!(benches);
