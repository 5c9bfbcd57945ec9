//! Synthetic two-phase capacity fade with known knee and end of life, cell
//! populations with per-cycle feature rows, and Weibull lifetime samples.

use rand::distributions::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{CapacityTrajectory, CycleFeatures, EOL_THRESHOLD};
use crate::reliability::LifetimeSample;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
}

/// Noise-free SOH is `1 - a k - b max(0, k - k*)^p`; observed SOH adds
/// N(0, noise_sd²) noise and is clipped at 0. Cycles run `0..length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub q0: f64,
    pub linear_rate: f64,
    pub knee_cycle: Option<usize>,
    pub accel: f64,
    pub exponent: f64,
    pub noise_sd: f64,
    pub length: usize,
    pub seed: u64,
    /// Mean discharge current magnitude, A.
    pub current_a: f64,
    pub temperature_c: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            q0: 2.0,
            linear_rate: 0.005,
            knee_cycle: Some(13),
            accel: 0.002,
            exponent: 2.0,
            noise_sd: 0.0,
            length: 40,
            seed: 0,
            current_a: 2.0,
            temperature_c: 25.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.q0 > 0.0
            && self.linear_rate >= 0.0
            && self.accel >= 0.0
            && self.noise_sd >= 0.0
            && self.exponent >= 1.0
            && self.length >= 1
            && [
                self.q0,
                self.linear_rate,
                self.accel,
                self.noise_sd,
                self.exponent,
                self.current_a,
                self.temperature_c,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SynthError::Spec(format!("{self:?}")))
        }
    }

    /// Noise-free SOH at real-valued cycle `k`.
    pub fn noiseless_soh(&self, k: f64) -> f64 {
        let knee = match self.knee_cycle {
            Some(ks) if self.accel > 0.0 && k > ks as f64 => self.accel * (k - ks as f64).powf(self.exponent),
            _ => 0.0,
        };
        (1.0 - self.linear_rate * k - knee).max(0.0)
    }

    /// Ground-truth knee: the break point when the accelerated branch is active.
    pub fn true_knee(&self) -> Option<usize> {
        self.knee_cycle.filter(|&k| self.accel > 0.0 && k < self.length)
    }

    /// First integer cycle whose noise-free SOH is below the EOL threshold,
    /// located from the closed-form root of the active branch.
    pub fn analytic_eol(&self) -> Option<usize> {
        let drop = 1.0 - EOL_THRESHOLD;
        let linear_root = if self.linear_rate > 0.0 {
            drop / self.linear_rate
        } else {
            f64::INFINITY
        };
        let root = match self.knee_cycle {
            Some(ks) if self.accel > 0.0 && linear_root > ks as f64 => {
                let ks = ks as f64;
                let c = self.linear_rate * ks - drop;
                let u = if self.exponent == 2.0 {
                    // b u² + a u + c = 0, c < 0
                    let (a, b) = (self.linear_rate, self.accel);
                    (-a + (a * a - 4.0 * b * c).sqrt()) / (2.0 * b)
                } else {
                    let f = |u: f64| self.accel * u.powf(self.exponent) + self.linear_rate * u + c;
                    let mut hi = 1.0;
                    while f(hi) < 0.0 {
                        hi *= 2.0;
                    }
                    let mut lo = 0.0;
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) < 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
                ks + u
            }
            _ => linear_root,
        };
        if !root.is_finite() || root >= self.length as f64 {
            return None;
        }
        // settle rounding at integer roots against the evaluated curve
        let mut k = root.floor() as usize + 1;
        while k > 0 && self.noiseless_soh((k - 1) as f64) < EOL_THRESHOLD {
            k -= 1;
        }
        while k < self.length && self.noiseless_soh(k as f64) >= EOL_THRESHOLD {
            k += 1;
        }
        (k < self.length).then_some(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCell {
    pub spec: TrajectorySpec,
    /// Observed trajectory annotated with the ground-truth knee and EOL.
    pub trajectory: CapacityTrajectory,
    pub rows: Vec<CycleFeatures>,
}

pub fn gen_trajectory(spec: &TrajectorySpec, cell_id: &str, dataset_tag: &str) -> Result<GeneratedCell, SynthError> {
    spec.validate()?;
    let mut noise_rng = stream(spec.seed, 0);
    let mut stress_rng = stream(spec.seed, 1);
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| SynthError::Spec(e.to_string()))?;
    let jitter = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::with_capacity(spec.length);
    let mut rows = Vec::with_capacity(spec.length);
    for k in 0..spec.length {
        let eps = if spec.noise_sd > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        let soh = (spec.noiseless_soh(k as f64) + eps).max(0.0);
        points.push((k, soh));
        let fade = 1.0 - soh;
        let q_ah = spec.q0 * soh;
        let current = spec.current_a * (1.0 + 0.01 * jitter.sample(&mut stress_rng));
        let temp = spec.temperature_c + 0.3 * jitter.sample(&mut stress_rng);
        rows.push(CycleFeatures {
            cell_id: cell_id.to_string(),
            cycle_index: k,
            q_ah,
            soh,
            e_wh: q_ah * (3.6 - 0.3 * fade),
            dv_ir: 0.05 * (1.0 + 2.0 * fade) * current,
            eod_slope: -(0.8 + 3.0 * fade),
            plateau_ah: q_ah * (0.6 - 0.5 * fade),
            mid_curvature: -(0.02 + 0.1 * fade),
            mean_current_a: -current,
            mean_temp_c: Some(temp),
            dataset_tag: dataset_tag.to_string(),
        });
    }
    let trajectory = CapacityTrajectory {
        cell_id: cell_id.to_string(),
        q0: spec.q0,
        points,
        eol_cycle: spec.analytic_eol(),
        knee_cycle: spec.true_knee(),
        dataset_tag: dataset_tag.to_string(),
    };
    Ok(GeneratedCell {
        spec: spec.clone(),
        trajectory,
        rows,
    })
}

/// Closed interval sampled uniformly; `lo == hi` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.lo + u * (self.hi - self.lo)
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthRule {
    Fixed {
        cycles: usize,
    },
    /// Run `extra` cycles past the ground-truth EOL, capped at `max`.
    PastEol {
        extra: usize,
        max: usize,
    },
}

/// Offsets applied to every cell of a population, for domain-shift fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Shift {
    pub rate_offset: f64,
    pub noise_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n_cells: usize,
    pub dataset_tag: String,
    pub seed: u64,
    pub q0: Range,
    pub linear_rate: Range,
    /// Knee cycle range; drawn as a uniform integer in `[lo, hi]`.
    pub knee_cycle: Range,
    /// Probability that a cell has an accelerated branch at all.
    pub knee_fraction: f64,
    pub accel: Range,
    pub exponent: f64,
    pub noise_sd: f64,
    pub length: LengthRule,
    pub current_a: Range,
    pub temperature_c: Range,
    pub shift: Shift,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_cells: 100,
            dataset_tag: "synthetic".into(),
            seed: 0,
            q0: Range::new(1.8, 2.2),
            linear_rate: Range::new(0.002, 0.005),
            knee_cycle: Range::new(15.0, 40.0),
            knee_fraction: 1.0,
            accel: Range::new(0.0005, 0.002),
            exponent: 2.0,
            noise_sd: 0.002,
            length: LengthRule::PastEol { extra: 10, max: 200 },
            current_a: Range::new(1.0, 3.0),
            temperature_c: Range::new(20.0, 40.0),
            shift: Shift::default(),
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ranges = [
            self.q0,
            self.linear_rate,
            self.knee_cycle,
            self.accel,
            self.current_a,
            self.temperature_c,
        ];
        if self.n_cells < 1 || !ranges.iter().all(Range::valid) || !(0.0..=1.0).contains(&self.knee_fraction) || self.knee_cycle.lo < 0.0 {
            return Err(SynthError::Spec(format!("population {:?}", self.dataset_tag)));
        }
        Ok(())
    }

    /// Trajectory spec of cell `index`, drawn from stream `(seed, index)`.
    pub fn cell_spec(&self, index: usize) -> TrajectorySpec {
        let mut rng = stream(self.seed, index as u64);
        let q0 = self.q0.sample(&mut rng);
        let linear_rate = (self.linear_rate.sample(&mut rng) + self.shift.rate_offset).max(0.0);
        let knee = self.knee_cycle.lo.round() as usize
            + rng.gen_range(0..=(self.knee_cycle.hi.round() - self.knee_cycle.lo.round()).max(0.0) as usize);
        let has_knee = rng.gen::<f64>() < self.knee_fraction;
        let accel = self.accel.sample(&mut rng);
        let current_a = self.current_a.sample(&mut rng);
        let temperature_c = self.temperature_c.sample(&mut rng);
        let mut spec = TrajectorySpec {
            q0,
            linear_rate,
            knee_cycle: has_knee.then_some(knee),
            accel: if has_knee { accel } else { 0.0 },
            exponent: self.exponent,
            noise_sd: (self.noise_sd + self.shift.noise_offset).max(0.0),
            length: 0,
            seed: derive_seed(self.seed, index as u64),
            current_a,
            temperature_c,
        };
        spec.length = match self.length {
            LengthRule::Fixed { cycles } => cycles,
            LengthRule::PastEol { extra, max } => {
                spec.length = max;
                spec.analytic_eol().map_or(max, |e| (e + extra + 1).min(max))
            }
        };
        spec
    }
}

pub fn gen_population(spec: &PopulationSpec) -> Result<Vec<GeneratedCell>, SynthError> {
    spec.validate()?;
    (0..spec.n_cells)
        .into_par_iter()
        .map(|i| gen_trajectory(&spec.cell_spec(i), &format!("{}-{i:04}", spec.dataset_tag), &spec.dataset_tag))
        .collect()
}

/// Inverse-transform Weibull draws `λ (-ln U)^{1/k}`.
pub fn gen_weibull(shape: f64, scale: f64, n: usize, seed: u64) -> Result<LifetimeSample, SynthError> {
    if !(shape > 0.0 && scale > 0.0 && n > 0) {
        return Err(SynthError::Spec(format!("weibull k = {shape}, λ = {scale}, n = {n}")));
    }
    let mut rng = stream(seed, 0);
    let values: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            scale * (-u.ln()).powf(1.0 / shape)
        })
        .collect();
    LifetimeSample::uncensored(&values).map_err(|e| SynthError::Spec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::detect_eol;

    #[test]
    fn linear_without_knee() {
        let spec = TrajectorySpec {
            accel: 0.0,
            linear_rate: 0.01,
            length: 30,
            ..Default::default()
        };
        let cell = gen_trajectory(&spec, "c", "t").unwrap();
        for &(k, s) in &cell.trajectory.points {
            assert_eq!(s, 1.0 - 0.01 * k as f64);
        }
        assert_eq!(cell.trajectory.knee_cycle, None);
        assert_eq!(cell.trajectory.eol_cycle, Some(21));
    }

    #[test]
    fn quadratic_branch_eol() {
        // 0.002 u² + 0.005 u - 0.135 = 0 at u = k - 13 gives u = 7.0 exactly,
        // so SOH(20) = 0.8 is not below threshold and EOL is 21
        let spec = TrajectorySpec {
            linear_rate: 0.005,
            accel: 0.002,
            knee_cycle: Some(13),
            length: 40,
            ..Default::default()
        };
        let eol = spec.analytic_eol().unwrap();
        let cell = gen_trajectory(&spec, "c", "t").unwrap();
        assert_eq!(Some(eol), detect_eol(&cell.trajectory, EOL_THRESHOLD));
        assert!((20..=21).contains(&eol));
        assert_eq!(cell.trajectory.knee_cycle, Some(13));
    }

    #[test]
    fn eol_beyond_length_is_absent() {
        let spec = TrajectorySpec {
            linear_rate: 0.001,
            accel: 0.0,
            length: 50,
            ..Default::default()
        };
        assert_eq!(spec.analytic_eol(), None);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = TrajectorySpec {
            noise_sd: 0.01,
            seed: 5,
            ..Default::default()
        };
        let a = gen_trajectory(&spec, "c", "t").unwrap();
        let b = gen_trajectory(&spec, "c", "t").unwrap();
        assert_eq!(a, b);
        let c = gen_trajectory(&TrajectorySpec { seed: 6, ..spec }, "c", "t").unwrap();
        assert_ne!(a.trajectory.points, c.trajectory.points);
    }

    #[test]
    fn soh_clipped_at_zero() {
        let spec = TrajectorySpec {
            linear_rate: 0.1,
            length: 20,
            accel: 0.0,
            ..Default::default()
        };
        let cell = gen_trajectory(&spec, "c", "t").unwrap();
        assert!(cell.trajectory.points.iter().all(|p| p.1 >= 0.0));
        assert_eq!(cell.trajectory.points[15].1, 0.0);
    }

    #[test]
    fn population_lengths_pass_eol() {
        let spec = PopulationSpec {
            n_cells: 20,
            ..Default::default()
        };
        let pop = gen_population(&spec).unwrap();
        assert_eq!(pop.len(), 20);
        for c in &pop {
            let eol = c.trajectory.eol_cycle.expect("default population reaches EOL");
            assert_eq!(c.trajectory.len(), eol + 11);
            assert_eq!(c.rows.len(), c.trajectory.len());
        }
        assert_eq!(pop, gen_population(&spec).unwrap());
    }

    #[test]
    fn weibull_sample_is_valid() {
        let s = gen_weibull(1.5, 10.0, 1000, 3).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(gen_weibull(0.0, 1.0, 10, 0).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(TrajectorySpec {
            linear_rate: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PopulationSpec {
            n_cells: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
