//! Population lifetime analysis: Kaplan-Meier, two-parameter Weibull and
//! lognormal maximum likelihood, and survival, hazard and median queries.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::special::{normal_pdf, normal_sf};

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("lifetime sample is empty")]
    Empty,
    #[error("lifetime {0} is not positive and finite")]
    NonPositive(f64),
    #[error("parametric fit needs at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("parametric fit requires uncensored data")]
    Censored,
    #[error("degenerate sample: all lifetimes equal")]
    Degenerate,
    #[error("shape iteration did not converge")]
    NonConvergence,
    #[error("time {0} outside the domain")]
    Domain(f64),
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub value: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSample {
    values: Vec<Lifetime>,
}

impl LifetimeSample {
    pub fn new(values: Vec<Lifetime>) -> Result<Self, ReliabilityError> {
        if values.is_empty() {
            return Err(ReliabilityError::Empty);
        }
        if let Some(bad) = values.iter().find(|l| !(l.value > 0.0 && l.value.is_finite())) {
            return Err(ReliabilityError::NonPositive(bad.value));
        }
        Ok(Self { values })
    }

    pub fn uncensored(values: &[f64]) -> Result<Self, ReliabilityError> {
        Self::new(values.iter().map(|&value| Lifetime { value, censored: false }).collect())
    }

    pub fn values(&self) -> &[Lifetime] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn complete(&self) -> Result<Vec<f64>, ReliabilityError> {
        if self.values.iter().any(|l| l.censored) {
            return Err(ReliabilityError::Censored);
        }
        Ok(self.values.iter().map(|l| l.value).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Weibull,
    Lognormal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::Lognormal => "lognormal",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ReliabilityError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weibull" => Ok(Family::Weibull),
            "lognormal" => Ok(Family::Lognormal),
            other => Err(ReliabilityError::UnknownFamily(other.to_string())),
        }
    }
}

/// Fitted two-parameter lifetime distribution with location pinned at 0.
///
/// Weibull: `shape` is k and `scale` is λ. Lognormal: `shape` is s, the
/// standard deviation of ln t, and `scale` is exp(μ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    pub family: Family,
    pub shape: f64,
    pub scale: f64,
    pub loglik: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve {
    /// `(event time, survival just after it)`, one entry per distinct event time.
    pub steps: Vec<(f64, f64)>,
}

impl KaplanMeierCurve {
    /// Right-continuous step function value at `t`.
    pub fn at(&self, t: f64) -> f64 {
        match self.steps.partition_point(|&(s, _)| s <= t) {
            0 => 1.0,
            i => self.steps[i - 1].1,
        }
    }
}

pub fn kaplan_meier(sample: &LifetimeSample) -> KaplanMeierCurve {
    let mut obs: Vec<Lifetime> = sample.values.clone();
    obs.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut at_risk = obs.len();
    let mut surv = 1.0;
    let mut steps = Vec::new();
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].value;
        let mut j = i;
        let mut deaths = 0;
        while j < obs.len() && obs[j].value == t {
            deaths += usize::from(!obs[j].censored);
            j += 1;
        }
        if deaths > 0 {
            surv *= (at_risk - deaths) as f64 / at_risk as f64;
            steps.push((t, surv));
        }
        at_risk -= j - i;
        i = j;
    }
    KaplanMeierCurve { steps }
}

const SHAPE_TOL: f64 = 1e-10;
const SHAPE_MAX_ITER: usize = 100;
const SHAPE_BRACKET: (f64, f64) = (1e-4, 1e4);

/// Profile-score quantities of the Weibull likelihood on data rescaled to max 1.
struct WeibullScore<'a> {
    z: &'a [f64],
    ln_z: Vec<f64>,
    mean_ln: f64,
}

impl WeibullScore<'_> {
    /// Returns `(g(k), g'(k))` with `g(k) = Σzᵏ ln z / Σzᵏ − 1/k − mean ln z`.
    fn eval(&self, k: f64) -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&z, &lz) in self.z.iter().zip(&self.ln_z) {
            let p = z.powf(k);
            s0 += p;
            s1 += p * lz;
            s2 += p * lz * lz;
        }
        let r = s1 / s0;
        (r - 1.0 / k - self.mean_ln, s2 / s0 - r * r + 1.0 / (k * k))
    }
}

fn weibull_shape(x: &[f64]) -> Result<f64, ReliabilityError> {
    let max = x.iter().cloned().fold(f64::MIN, f64::max);
    let z: Vec<f64> = x.iter().map(|v| v / max).collect();
    let ln_z: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    let mean_ln = ln_z.iter().sum::<f64>() / z.len() as f64;
    let score = WeibullScore { z: &z, ln_z, mean_ln };

    let mut k = 1.0;
    for _ in 0..SHAPE_MAX_ITER {
        let (g, dg) = score.eval(k);
        let next = k - g / dg;
        if !(next > SHAPE_BRACKET.0 && next < SHAPE_BRACKET.1) {
            break;
        }
        if (next - k).abs() <= SHAPE_TOL * k {
            return Ok(next);
        }
        k = next;
    }
    log::debug!("weibull shape: Newton left the bracket, bisecting");
    // g is increasing in k
    let (mut lo, mut hi) = SHAPE_BRACKET;
    if score.eval(lo).0 > 0.0 || score.eval(hi).0 < 0.0 {
        return Err(ReliabilityError::NonConvergence);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score.eval(mid).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= SHAPE_TOL * mid {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(ReliabilityError::NonConvergence)
}

pub fn fit_lifetime(family: Family, sample: &LifetimeSample) -> Result<LifetimeFit, ReliabilityError> {
    let x = sample.complete()?;
    let n = x.len();
    if n < 3 {
        return Err(ReliabilityError::TooFew(n));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(ReliabilityError::Degenerate);
    }
    let nf = n as f64;
    let ln_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let (shape, scale) = match family {
        Family::Weibull => {
            let k = weibull_shape(&x)?;
            let max = x.iter().cloned().fold(f64::MIN, f64::max);
            let mean_pow = x.iter().map(|v| (v / max).powf(k)).sum::<f64>() / nf;
            (k, max * mean_pow.powf(1.0 / k))
        }
        Family::Lognormal => {
            let mu = ln_x.iter().sum::<f64>() / nf;
            let var = ln_x.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / nf;
            (var.sqrt(), mu.exp())
        }
    };
    let mut fit = LifetimeFit {
        family,
        shape,
        scale,
        loglik: 0.0,
        n,
    };
    fit.loglik = log_likelihood(&fit, &x);
    Ok(fit)
}

pub fn log_likelihood(fit: &LifetimeFit, x: &[f64]) -> f64 {
    let (s, c) = (fit.shape, fit.scale);
    match fit.family {
        Family::Weibull => x
            .iter()
            .map(|&t| {
                let r = t / c;
                s.ln() - c.ln() + (s - 1.0) * r.ln() - r.powf(s)
            })
            .sum(),
        Family::Lognormal => {
            let mu = c.ln();
            let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
            x.iter()
                .map(|&t| {
                    let z = (t.ln() - mu) / s;
                    -t.ln() - s.ln() - half_ln_2pi - 0.5 * z * z
                })
                .sum()
        }
    }
}

pub fn survival(fit: &LifetimeFit, t: f64) -> Result<f64, ReliabilityError> {
    if !(t >= 0.0) {
        return Err(ReliabilityError::Domain(t));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(match fit.family {
        Family::Weibull => (-(t / fit.scale).powf(fit.shape)).exp(),
        Family::Lognormal => normal_sf((t / fit.scale).ln() / fit.shape),
    })
}

pub fn density(fit: &LifetimeFit, t: f64) -> Result<f64, ReliabilityError> {
    if !(t > 0.0) {
        return Err(ReliabilityError::Domain(t));
    }
    let (s, c) = (fit.shape, fit.scale);
    Ok(match fit.family {
        Family::Weibull => {
            let r = t / c;
            (s / c) * r.powf(s - 1.0) * (-r.powf(s)).exp()
        }
        Family::Lognormal => normal_pdf((t / c).ln() / s) / (t * s),
    })
}

pub fn hazard(fit: &LifetimeFit, t: f64) -> Result<f64, ReliabilityError> {
    if !(t > 0.0) {
        return Err(ReliabilityError::Domain(t));
    }
    Ok(match fit.family {
        Family::Weibull => (fit.shape / fit.scale) * (t / fit.scale).powf(fit.shape - 1.0),
        Family::Lognormal => density(fit, t)? / survival(fit, t)?,
    })
}

pub fn median_lifetime(fit: &LifetimeFit) -> f64 {
    match fit.family {
        Family::Weibull => fit.scale * std::f64::consts::LN_2.powf(1.0 / fit.shape),
        Family::Lognormal => fit.scale,
    }
}

/// `(n, mean, sample standard deviation)` of the observed lifetimes.
pub fn population_summary(sample: &LifetimeSample) -> (usize, f64, f64) {
    let n = sample.len();
    let mean = sample.values.iter().map(|l| l.value).sum::<f64>() / n as f64;
    let std = if n > 1 {
        let ss: f64 = sample.values.iter().map(|l| (l.value - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    (n, mean, std)
}

pub const FIT_TABLE_COLUMNS: [&str; 10] = [
    "dataset",
    "N_cells",
    "EOL_mean",
    "EOL_std",
    "weibull_c",
    "weibull_loc",
    "weibull_scale",
    "lognorm_s",
    "lognorm_loc",
    "lognorm_scale",
];

/// One row of the per-dataset lifetime table.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFit {
    pub dataset: String,
    pub n_cells: usize,
    pub eol_mean: f64,
    pub eol_std: f64,
    pub weibull: LifetimeFit,
    pub lognormal: LifetimeFit,
}

impl PopulationFit {
    pub fn from_sample(dataset: &str, sample: &LifetimeSample) -> Result<Self, ReliabilityError> {
        let (n_cells, eol_mean, eol_std) = population_summary(sample);
        Ok(Self {
            dataset: dataset.to_string(),
            n_cells,
            eol_mean,
            eol_std,
            weibull: fit_lifetime(Family::Weibull, sample)?,
            lognormal: fit_lifetime(Family::Lognormal, sample)?,
        })
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.n_cells.to_string(),
            self.eol_mean.to_string(),
            self.eol_std.to_string(),
            self.weibull.shape.to_string(),
            "0".to_string(),
            self.weibull.scale.to_string(),
            self.lognormal.shape.to_string(),
            "0".to_string(),
            self.lognormal.scale.to_string(),
        ]
    }
}
