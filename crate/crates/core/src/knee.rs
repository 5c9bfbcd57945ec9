//! Knee-onset detection on capacity trajectories.
//!
//! The trajectory is smoothed, its curvature `Q'' / (1 + Q'^2)^(3/2)` is
//! evaluated along the cycle axis, and the knee is the earliest cycle past a
//! short burn-in whose curvature magnitude reaches the threshold and is
//! confirmed by the following cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CapacityTrajectory;
use crate::inr::{self, InrConfig, InrError, InrModel, TrainingSample};

#[derive(Debug, Error, PartialEq)]
pub enum KneeError {
    #[error("trajectory has {got} points, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("invalid knee config: {0}")]
    Config(String),
    #[error("curvature needs both neighbours; cycle {0} is on the boundary or absent")]
    Boundary(usize),
    #[error(transparent)]
    Inr(#[from] InrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoother {
    #[default]
    MovingAverage,
    InrFit,
}

impl Smoother {
    pub fn name(self) -> &'static str {
        match self {
            Smoother::MovingAverage => "moving_average",
            Smoother::InrFit => "inr_fit",
        }
    }
}

/// Which degradation measure the threshold is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// `Q'' / (1 + Q'^2)^(3/2)`.
    #[default]
    Curvature,
    /// Raw second derivative `Q''`.
    SecondDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KneeConfig {
    pub smoother: Smoother,
    /// Moving-average window (odd, >= 3).
    pub window: usize,
    /// Absolute threshold; `None` resolves it from the data.
    pub tau: Option<f64>,
    /// Data-relative threshold: multiple of the robust noise level of the
    /// curvature series.
    pub baseline_multiplier: f64,
    /// Data-relative threshold: fraction of the peak |curvature|.
    pub peak_fraction: f64,
    /// Lower bound on the resolved threshold, relative to max |Q|.
    pub relative_floor: f64,
    /// Cycles from the start of the trajectory during which detection is suppressed.
    pub min_prefix: usize,
    pub measure: Measure,
    /// Model used by the `inr_fit` smoother.
    pub inr: InrConfig,
}

impl Default for KneeConfig {
    fn default() -> Self {
        Self {
            smoother: Smoother::MovingAverage,
            window: 5,
            tau: None,
            baseline_multiplier: 4.0,
            peak_fraction: 0.45,
            relative_floor: 1e-7,
            min_prefix: 3,
            measure: Measure::Curvature,
            inr: InrConfig {
                variant: inr::Variant::MlpPosenc,
                posenc_frequencies: 0,
                hidden_layers: 2,
                hidden_width: 16,
                dropout_p: 0.0,
                epochs: 400,
                learning_rate: 1e-2,
                ..InrConfig::default()
            },
        }
    }
}

impl KneeConfig {
    pub fn validate(&self) -> Result<(), KneeError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(KneeError::Config("window must be odd and >= 3".into()));
        }
        if self.min_prefix < 1 {
            return Err(KneeError::Config("min_prefix must be >= 1".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(KneeError::Config("tau must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeReport {
    pub cell_id: String,
    pub knee_cycle: Option<usize>,
    pub curvature_series: Vec<(usize, f64)>,
    pub threshold_used: f64,
    pub smoother_used: Smoother,
    /// True when the curvature was extrapolated beyond the observed cycles.
    pub extrapolated: bool,
}

/// Centered moving average; windows shrink symmetrically at the edges.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let r = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let h = r.min(i).min(n - 1 - i);
            // centred on values[i] so constant runs are reproduced exactly
            let c = values[i];
            c + values[i - h..=i + h].iter().map(|v| v - c).sum::<f64>() / (2 * h + 1) as f64
        })
        .collect()
}

/// Smoothed `(cycle, SOH)` series on the observed cycle grid.
pub fn smooth_trajectory(traj: &CapacityTrajectory, cfg: &KneeConfig) -> Result<Vec<(usize, f64)>, KneeError> {
    cfg.validate()?;
    match cfg.smoother {
        Smoother::MovingAverage => {
            if traj.len() < cfg.window {
                return Err(KneeError::TooShort {
                    got: traj.len(),
                    need: cfg.window,
                });
            }
            let smoothed = moving_average(&traj.soh(), cfg.window);
            Ok(traj.cycles().into_iter().zip(smoothed).collect())
        }
        Smoother::InrFit => {
            let model = fit_capacity_model(traj, &cfg.inr)?;
            traj.points.iter().map(|&(k, _)| Ok((k, model.predict(&[k as f64])?))).collect()
        }
    }
}

fn fit_capacity_model(traj: &CapacityTrajectory, cfg: &InrConfig) -> Result<InrModel, KneeError> {
    if traj.len() < 4 {
        return Err(KneeError::TooShort { got: traj.len(), need: 4 });
    }
    let (model, _) = inr::fit_trajectory_with_split(traj, cfg, 0.0)?;
    Ok(model)
}

/// Curvature from first and second derivatives.
pub fn curvature_from_derivatives(d1: f64, d2: f64, measure: Measure) -> f64 {
    match measure {
        Measure::Curvature => d2 / (1.0 + d1 * d1).powf(1.5),
        Measure::SecondDerivative => d2,
    }
}

/// Three-point first and second derivative at interior position `i` of a
/// possibly non-uniform grid.
fn central_derivatives(xs: &[f64], ys: &[f64], i: usize) -> (f64, f64) {
    let (hm, hp) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
    let (ym, y0, yp) = (ys[i - 1], ys[i], ys[i + 1]);
    let d1 = (hm * hm * yp - hp * hp * ym + (hp * hp - hm * hm) * y0) / (hm * hp * (hm + hp));
    let d2 = 2.0 * ((yp - y0) / hp - (y0 - ym) / hm) / (hm + hp);
    (d1, d2)
}

/// Curvature of the curve `ys(xs)` at interior position `i`.
pub fn curvature_at(xs: &[f64], ys: &[f64], i: usize) -> Result<f64, KneeError> {
    if i == 0 || i + 1 >= xs.len() {
        return Err(KneeError::Boundary(i));
    }
    let (d1, d2) = central_derivatives(xs, ys, i);
    Ok(curvature_from_derivatives(d1, d2, Measure::Curvature))
}

/// Curvature of a `(cycle, Q)` series at cycle `k` by central differences.
pub fn curvature(series: &[(usize, f64)], k: usize) -> Result<f64, KneeError> {
    let i = series.iter().position(|p| p.0 == k).ok_or(KneeError::Boundary(k))?;
    let xs: Vec<f64> = series.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1).collect();
    curvature_at(&xs, &ys, i)
}

/// Robust noise level of a curvature series: median |first difference|,
/// scaled to the standard deviation of the series itself. For a
/// moving-average-smoothed white-noise signal that ratio is √3 at any window.
fn noise_scale(series: &[(usize, f64)]) -> f64 {
    let diffs: Vec<f64> = series.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    median(diffs) / (0.674_489_75 * 3f64.sqrt())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Resolves the threshold: the absolute override if set, otherwise the larger
/// of the baseline rule and the peak rule, floored relative to the signal size.
pub fn resolve_threshold(series: &[(usize, f64)], signal_scale: f64, cfg: &KneeConfig) -> f64 {
    resolve_threshold_with_reference(series, series.len(), signal_scale, cfg)
}

/// As [`resolve_threshold`], with the baseline taken from the first third of
/// the leading `reference` points only (the observed part of an extrapolated
/// series).
fn resolve_threshold_with_reference(series: &[(usize, f64)], reference: usize, signal_scale: f64, cfg: &KneeConfig) -> f64 {
    if let Some(t) = cfg.tau {
        return t;
    }
    let abs: Vec<f64> = series.iter().map(|p| p.1.abs()).collect();
    let reference = reference.min(series.len());
    let third = reference.div_ceil(3);
    let level = noise_scale(&series[..reference]).max(median(abs[..third].to_vec()));
    let baseline = cfg.baseline_multiplier * level;
    let peak = cfg.peak_fraction * abs.iter().copied().fold(0.0, f64::max);
    let floor = (cfg.relative_floor * signal_scale.abs()).max(f64::MIN_POSITIVE);
    baseline.max(peak).max(floor)
}

/// Earliest cycle at or after `first_allowed` whose |curvature| reaches `tau`
/// and whose successor reaches `tau / 2`.
pub fn select_knee(series: &[(usize, f64)], tau: f64, first_allowed: usize) -> Option<usize> {
    series.windows(2).find_map(|w| {
        let ((k, c), (_, next)) = (w[0], w[1]);
        (k >= first_allowed && c.abs() >= tau && next.abs() >= 0.5 * tau).then_some(k)
    })
}

/// Curvature series of the moving-average-smoothed trajectory, restricted to
/// cycles whose neighbours were smoothed with the full window.
fn moving_average_curvature(traj: &CapacityTrajectory, cfg: &KneeConfig) -> Result<Vec<(usize, f64)>, KneeError> {
    let smoothed = smooth_trajectory(traj, cfg)?;
    let xs: Vec<f64> = smoothed.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = smoothed.iter().map(|p| p.1).collect();
    let r = cfg.window / 2;
    let n = xs.len();
    if n < 2 * r + 3 {
        return Ok(Vec::new());
    }
    Ok((r + 1..n - r - 1)
        .map(|i| {
            let (d1, d2) = central_derivatives(&xs, &ys, i);
            (smoothed[i].0, curvature_from_derivatives(d1, d2, cfg.measure))
        })
        .collect())
}

fn model_curvature(model: &InrModel, cycles: impl Iterator<Item = usize>, measure: Measure) -> Result<Vec<(usize, f64)>, KneeError> {
    cycles
        .map(|k| {
            let j = model.jets(&[k as f64], 0)?[0];
            Ok((k, curvature_from_derivatives(j.d1, j.d2, measure)))
        })
        .collect()
}

/// Detects the knee of a full trajectory.
pub fn detect_knee(traj: &CapacityTrajectory, cfg: &KneeConfig) -> Result<KneeReport, KneeError> {
    cfg.validate()?;
    let need = cfg.window.max(cfg.min_prefix + 2);
    if traj.len() < need {
        return Err(KneeError::TooShort { got: traj.len(), need });
    }
    let series = match cfg.smoother {
        Smoother::MovingAverage => moving_average_curvature(traj, cfg)?,
        Smoother::InrFit => {
            let model = fit_capacity_model(traj, &cfg.inr)?;
            model_curvature(&model, traj.cycles().into_iter(), cfg.measure)?
        }
    };
    let scale = traj.points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let tau = resolve_threshold(&series, scale, cfg);
    let first_allowed = traj.points[0].0 + cfg.min_prefix;
    Ok(KneeReport {
        cell_id: traj.cell_id.clone(),
        knee_cycle: select_knee(&series, tau, first_allowed),
        curvature_series: series,
        threshold_used: tau,
        smoother_used: cfg.smoother,
        extrapolated: false,
    })
}

/// Knee estimate from the first `N` cycles only: a capacity model is fitted to
/// the prefix and its analytic curvature is extrapolated up to `3N` cycles.
pub fn early_life_knee(prefix: &CapacityTrajectory, cfg: &KneeConfig, inr_cfg: &InrConfig) -> Result<KneeReport, KneeError> {
    cfg.validate()?;
    let n = prefix.len();
    if n < 4 {
        return Err(KneeError::TooShort { got: n, need: 4 });
    }
    let samples: Vec<TrainingSample> = prefix
        .points
        .iter()
        .map(|&(k, soh)| TrainingSample::new(vec![k as f64], vec![soh]))
        .collect();
    let mut model = InrModel::new(InrConfig {
        input_dim: 1,
        output_dim: 1,
        ..inr_cfg.clone()
    })?;
    model.train(&samples, &[])?;
    let first = prefix.points[0].0;
    let series = model_curvature(&model, first..first + 3 * n, cfg.measure)?;
    let scale = prefix.points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let observed = series.iter().take_while(|p| p.0 <= prefix.points[n - 1].0).count();
    let tau = resolve_threshold_with_reference(&series, observed, scale, cfg);
    Ok(KneeReport {
        cell_id: prefix.cell_id.clone(),
        knee_cycle: select_knee(&series, tau, first + cfg.min_prefix),
        curvature_series: series,
        threshold_used: tau,
        smoother_used: Smoother::InrFit,
        extrapolated: true,
    })
}
