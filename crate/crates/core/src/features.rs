//! Per-cycle capacity, energy and discharge-curve shape descriptors, and
//! assembly of per-cell capacity trajectories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Cycle, CycleKind};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cycle {0} is not a discharge cycle")]
    NotDischarge(usize),
    #[error("cycle has {0} samples, need at least {1}")]
    TooFewSamples(usize, usize),
    #[error("window of {window} s exceeds segment duration {duration} s")]
    WindowTooLong { window: f64, duration: f64 },
    #[error("cycle delivers zero capacity")]
    ZeroCapacity,
    #[error("initial capacity must be positive, got {0}")]
    NonPositiveQ0(f64),
    #[error("rows mix cell ids `{0}` and `{1}`")]
    MixedCells(String, String),
    #[error("no rows for trajectory")]
    Empty,
}

/// One row of the harmonised per-cycle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFeatures {
    pub cell_id: String,
    pub cycle_index: usize,
    pub q_ah: f64,
    pub soh: f64,
    pub e_wh: f64,
    pub dv_ir: f64,
    pub eod_slope: f64,
    pub plateau_ah: f64,
    pub mid_curvature: f64,
    pub mean_current_a: f64,
    pub mean_temp_c: Option<f64>,
    pub dataset_tag: String,
}

/// Ordered `(cycle_index, soh)` series for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityTrajectory {
    pub cell_id: String,
    pub q0: f64,
    pub points: Vec<(usize, f64)>,
    pub eol_cycle: Option<usize>,
    pub knee_cycle: Option<usize>,
    pub dataset_tag: String,
}

impl CapacityTrajectory {
    pub fn cycles(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn soh(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// First `n` points, keeping the annotations that do not depend on later
    /// cycles (EOL and knee annotations are cleared).
    pub fn prefix(&self, n: usize) -> CapacityTrajectory {
        CapacityTrajectory {
            points: self.points[..n.min(self.points.len())].to_vec(),
            eol_cycle: None,
            knee_cycle: None,
            ..self.clone()
        }
    }
}

/// End-of-life threshold on SOH.
pub const EOL_THRESHOLD: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    /// Seconds after discharge onset at which the IR drop is read.
    pub ir_window: f64,
    /// Trailing fraction of delivered capacity used for the end-of-discharge slope.
    pub eod_fraction: f64,
    /// |dV/dQ| band (V/Ah) below which the curve counts as plateau.
    pub plateau_band: f64,
    /// Capacity fraction range used for the mid-discharge curvature.
    pub mid_fraction: (f64, f64),
    pub min_samples: usize,
    /// Points of the uniform capacity grid the curve is resampled onto.
    pub grid_points: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            ir_window: 10.0,
            eod_fraction: 0.1,
            plateau_band: 0.05,
            mid_fraction: (0.25, 0.75),
            min_samples: 10,
            grid_points: 101,
        }
    }
}

/// Shape descriptors of one discharge curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeDescriptors {
    pub dv_ir: f64,
    pub eod_slope: f64,
    pub plateau_ah: f64,
    pub mid_curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q0Rule {
    /// First observed discharge capacity.
    #[default]
    FirstCycle,
    /// Externally supplied rated capacity in Ah.
    Rated(f64),
}

fn check_discharge(cycle: &Cycle) -> Result<(), FeatureError> {
    if cycle.kind != CycleKind::Discharge {
        return Err(FeatureError::NotDischarge(cycle.cycle_index));
    }
    if cycle.samples.len() < 2 {
        return Err(FeatureError::TooFewSamples(cycle.samples.len(), 2));
    }
    Ok(())
}

/// Delivered capacity in Ah: trapezoidal integral of |I| dt.
pub fn delivered_capacity(cycle: &Cycle) -> Result<f64, FeatureError> {
    check_discharge(cycle)?;
    let s = &cycle.samples;
    let coulombs: f64 = s
        .windows(2)
        .map(|w| 0.5 * (w[0].current.abs() + w[1].current.abs()) * (w[1].t - w[0].t))
        .sum();
    Ok(coulombs / 3600.0)
}

/// Energy throughput in Wh: integral of V·|I| dt with both signals taken
/// piecewise linear between samples.
pub fn energy_throughput(cycle: &Cycle) -> Result<f64, FeatureError> {
    check_discharge(cycle)?;
    let s = &cycle.samples;
    let joules: f64 = s
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            let (v0, v1) = (w[0].voltage, w[1].voltage);
            let (i0, i1) = (w[0].current.abs(), w[1].current.abs());
            // exact integral of the product of two linear interpolants
            dt * (2.0 * v0 * i0 + v0 * i1 + v1 * i0 + 2.0 * v1 * i1) / 6.0
        })
        .sum();
    Ok(joules / 3600.0)
}

/// Cumulative delivered capacity (Ah) at every sample.
fn cumulative_capacity(cycle: &Cycle) -> Vec<f64> {
    let mut q = Vec::with_capacity(cycle.samples.len());
    let mut acc = 0.0;
    q.push(0.0);
    for w in cycle.samples.windows(2) {
        acc += 0.5 * (w[0].current.abs() + w[1].current.abs()) * (w[1].t - w[0].t) / 3600.0;
        q.push(acc);
    }
    q
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.partition_point(|&v| v < x) {
        0 => ys[0],
        i if i >= xs.len() => ys[xs.len() - 1],
        i => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            let w = (x - x0) / (x1 - x0);
            ys[i - 1] + w * (ys[i] - ys[i - 1])
        }
    }
}

/// Computes the IR drop, end-of-discharge slope, plateau length and
/// mid-discharge curvature of a discharge curve.
///
/// The voltage curve is resampled on a uniform capacity grid by linear
/// interpolation before the slope, plateau and curvature are taken.
pub fn shape_descriptors(cycle: &Cycle, cfg: &DescriptorConfig) -> Result<ShapeDescriptors, FeatureError> {
    check_discharge(cycle)?;
    let s = &cycle.samples;
    if s.len() < cfg.min_samples.max(2) {
        return Err(FeatureError::TooFewSamples(s.len(), cfg.min_samples.max(2)));
    }
    let duration = s[s.len() - 1].t - s[0].t;
    if cfg.ir_window > duration {
        return Err(FeatureError::WindowTooLong {
            window: cfg.ir_window,
            duration,
        });
    }
    let times: Vec<f64> = s.iter().map(|x| x.t).collect();
    let volts: Vec<f64> = s.iter().map(|x| x.voltage).collect();
    let entry = cycle.entry_voltage.unwrap_or(volts[0]);
    let dv_ir = entry - interp(&times, &volts, s[0].t + cfg.ir_window);

    let q = cumulative_capacity(cycle);
    let q_total = q[q.len() - 1];
    if !(q_total > 0.0) {
        return Err(FeatureError::ZeroCapacity);
    }
    // strictly increasing capacity knots; a zero-current interval keeps the later voltage
    let mut qk: Vec<f64> = Vec::with_capacity(q.len());
    let mut vk: Vec<f64> = Vec::with_capacity(q.len());
    for (&qi, &vi) in q.iter().zip(&volts) {
        match qk.last() {
            Some(&last) if qi <= last => *vk.last_mut().unwrap() = vi,
            _ => {
                qk.push(qi);
                vk.push(vi);
            }
        }
    }
    let m = cfg.grid_points.max(5);
    let h = q_total / (m - 1) as f64;
    let grid_q: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
    let grid_v: Vec<f64> = grid_q.iter().map(|&x| interp(&qk, &vk, x)).collect();

    let eod_start = (1.0 - cfg.eod_fraction) * q_total;
    let tail: Vec<(f64, f64)> = grid_q
        .iter()
        .zip(&grid_v)
        .filter(|(&x, _)| x >= eod_start - 1e-12 * q_total)
        .map(|(&x, &y)| (x, y))
        .collect();
    let eod_slope = if tail.len() >= 2 {
        least_squares_slope(&tail)
    } else {
        let n = grid_v.len();
        (grid_v[n - 1] - grid_v[n - 2]) / h
    };

    let plateau_ah: f64 = grid_v.windows(2).filter(|w| ((w[1] - w[0]) / h).abs() < cfg.plateau_band).count() as f64 * h;

    let (lo, hi) = cfg.mid_fraction;
    let second: Vec<f64> = (1..m - 1)
        .filter(|&i| {
            let frac = grid_q[i] / q_total;
            frac >= lo - 1e-12 && frac <= hi + 1e-12
        })
        .map(|i| (grid_v[i + 1] - 2.0 * grid_v[i] + grid_v[i - 1]) / (h * h))
        .collect();
    let mid_curvature = if second.is_empty() {
        f64::NAN
    } else {
        second.iter().sum::<f64>() / second.len() as f64
    };

    Ok(ShapeDescriptors {
        dv_ir,
        eod_slope,
        plateau_ah: plateau_ah.min(q_total),
        mid_curvature,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Builds the feature row for one discharge cycle. `soh` is left as NaN until
/// the cell's initial capacity is known; descriptors that cannot be computed
/// are emitted as NaN.
pub fn cycle_features(cycle: &Cycle, dataset_tag: &str, cfg: &DescriptorConfig) -> Result<CycleFeatures, FeatureError> {
    let q_ah = delivered_capacity(cycle)?;
    let e_wh = energy_throughput(cycle)?;
    let desc = match shape_descriptors(cycle, cfg) {
        Ok(d) => d,
        Err(e) => {
            log::debug!("{} cycle {}: descriptors missing ({e})", cycle.cell_id, cycle.cycle_index);
            ShapeDescriptors {
                dv_ir: f64::NAN,
                eod_slope: f64::NAN,
                plateau_ah: f64::NAN,
                mid_curvature: f64::NAN,
            }
        }
    };
    let s = &cycle.samples;
    let mean_current_a = s.iter().map(|x| x.current).sum::<f64>() / s.len() as f64;
    let temps: Vec<f64> = s.iter().filter_map(|x| x.temperature).collect();
    let mean_temp_c = (!temps.is_empty()).then(|| temps.iter().sum::<f64>() / temps.len() as f64);
    Ok(CycleFeatures {
        cell_id: cycle.cell_id.clone(),
        cycle_index: cycle.cycle_index,
        q_ah,
        soh: f64::NAN,
        e_wh,
        dv_ir: desc.dv_ir,
        eod_slope: desc.eod_slope,
        plateau_ah: desc.plateau_ah,
        mid_curvature: desc.mid_curvature,
        mean_current_a,
        mean_temp_c,
        dataset_tag: dataset_tag.to_string(),
    })
}

/// Feature rows for every discharge cycle of one cell, with SOH filled in.
///
/// Cycles that deliver no capacity are dropped (and logged).
pub fn cell_feature_rows(
    cycles: &[Cycle],
    dataset_tag: &str,
    cfg: &DescriptorConfig,
    q0_rule: Q0Rule,
) -> Result<Vec<CycleFeatures>, FeatureError> {
    let mut rows = Vec::new();
    for c in cycles.iter().filter(|c| c.kind == CycleKind::Discharge) {
        match cycle_features(c, dataset_tag, cfg) {
            Ok(r) if r.q_ah > 0.0 => rows.push(r),
            Ok(_) => log::info!("{} cycle {}: dropped, zero capacity", c.cell_id, c.cycle_index),
            Err(e) => log::info!("{} cycle {}: dropped, {e}", c.cell_id, c.cycle_index),
        }
    }
    if rows.is_empty() {
        return Ok(rows);
    }
    rows.sort_by_key(|r| r.cycle_index);
    let q0 = resolve_q0(&rows, q0_rule)?;
    for r in &mut rows {
        r.soh = r.q_ah / q0;
    }
    Ok(rows)
}

fn resolve_q0(rows: &[CycleFeatures], rule: Q0Rule) -> Result<f64, FeatureError> {
    let q0 = match rule {
        Q0Rule::FirstCycle => rows.iter().min_by_key(|r| r.cycle_index).ok_or(FeatureError::Empty)?.q_ah,
        Q0Rule::Rated(q) => q,
    };
    if !(q0 > 0.0) {
        return Err(FeatureError::NonPositiveQ0(q0));
    }
    Ok(q0)
}

/// Assembles the SOH trajectory of one cell and annotates its EOL at the
/// default threshold.
pub fn build_trajectory(rows: &[CycleFeatures], q0_rule: Q0Rule) -> Result<CapacityTrajectory, FeatureError> {
    let first = rows.first().ok_or(FeatureError::Empty)?;
    if let Some(other) = rows.iter().find(|r| r.cell_id != first.cell_id) {
        return Err(FeatureError::MixedCells(first.cell_id.clone(), other.cell_id.clone()));
    }
    let q0 = resolve_q0(rows, q0_rule)?;
    let mut points: Vec<(usize, f64)> = rows.iter().map(|r| (r.cycle_index, r.q_ah / q0)).collect();
    points.sort_by_key(|p| p.0);
    points.dedup_by_key(|p| p.0);
    let mut traj = CapacityTrajectory {
        cell_id: first.cell_id.clone(),
        q0,
        points,
        eol_cycle: None,
        knee_cycle: None,
        dataset_tag: first.dataset_tag.clone(),
    };
    traj.eol_cycle = detect_eol(&traj, EOL_THRESHOLD);
    Ok(traj)
}

/// First cycle whose SOH is strictly below `threshold`.
pub fn detect_eol(traj: &CapacityTrajectory, threshold: f64) -> Option<usize> {
    traj.points.iter().find(|p| p.1 < threshold).map(|p| p.0)
}

/// Groups rows by cell id, preserving first-appearance order.
pub fn group_by_cell(rows: &[CycleFeatures]) -> Vec<Vec<CycleFeatures>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<CycleFeatures>> = std::collections::HashMap::new();
    for r in rows {
        groups
            .entry(r.cell_id.as_str())
            .or_insert_with(|| {
                order.push(r.cell_id.as_str());
                Vec::new()
            })
            .push(r.clone());
    }
    order.into_iter().map(|id| groups.remove(id).unwrap()).collect()
}
