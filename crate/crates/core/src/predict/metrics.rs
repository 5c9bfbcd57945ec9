use serde::{Deserialize, Serialize};

use super::PredictError;

/// Regression metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when every target is zero.
    pub mape: Option<f64>,
    pub r2: f64,
    pub n: usize,
    /// Rows left out of the MAPE because their target is zero.
    pub zero_targets: usize,
}

pub fn evaluate(predictions: &[f64], targets: &[f64]) -> Result<EvalReport, PredictError> {
    if predictions.len() != targets.len() {
        return Err(PredictError::LengthMismatch(predictions.len(), targets.len()));
    }
    let n = targets.len();
    if n < 2 {
        return Err(PredictError::TooFewRows { need: 2, got: n });
    }
    if predictions.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(PredictError::NonFinite);
    }
    let nf = n as f64;
    let mean_y = targets.iter().sum::<f64>() / nf;
    let (mut sse, mut sae, mut sst, mut ape, mut zeros) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (p, y) in predictions.iter().zip(targets) {
        let e = p - y;
        sse += e * e;
        sae += e.abs();
        sst += (y - mean_y) * (y - mean_y);
        if *y == 0.0 {
            zeros += 1;
        } else {
            ape += (e / y).abs();
        }
    }
    if sst == 0.0 {
        return Err(PredictError::ConstantTargets);
    }
    let mae = sae / nf;
    // rmse >= mae holds exactly; rounding of the two sums can invert it by an ulp
    let rmse = (sse / nf).sqrt().max(mae);
    Ok(EvalReport {
        rmse,
        mae,
        mape: (zeros < n).then(|| 100.0 * ape / (n - zeros) as f64),
        r2: if sse > 0.0 {
            // a nonzero residual must not round up to a perfect score
            (1.0 - sse / sst).min(1.0 - f64::EPSILON / 2.0)
        } else {
            1.0
        },
        n,
        zero_targets: zeros,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation across folds; NaN for a single fold.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std }
    }
}

/// Per-fold metrics with their mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub n_folds: usize,
    pub folds: Vec<EvalReport>,
    pub rmse: MeanStd,
    pub mae: MeanStd,
    pub mape: MeanStd,
    pub r2: MeanStd,
}

impl CvSummary {
    pub fn from_folds(folds: Vec<EvalReport>) -> Self {
        let pick = |f: &dyn Fn(&EvalReport) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
        Self {
            n_folds: folds.len(),
            rmse: pick(&|r| r.rmse),
            mae: pick(&|r| r.mae),
            mape: pick(&|r| r.mape.unwrap_or(f64::NAN)),
            r2: pick(&|r| r.r2),
            folds,
        }
    }
}
