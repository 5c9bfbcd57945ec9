//! Early-life SOH/RUL regression: leakage-guarded design matrices, linear,
//! polynomial, random-forest and INR regressors, cell-level cross-validation,
//! cross-dataset transfer, calibration diagnostics and permutation importance.

mod dataset;
mod forest;
mod linear;
mod metrics;

pub use dataset::{
    cell_level_split, early_feature_names, early_features, fold_indices, full_features, make_dataset, CellData, DatasetConfig, DatasetRow,
    LeakageClass, SupervisedDataset, TargetKind,
};
pub use forest::{fit_forest, ForestConfig, ForestModel, Node, Tree, UncertainPrediction, UncertaintySource};
pub use linear::{fit_baseline, fit_least_squares, monomials, BaselineKind, LinearModel};
pub use metrics::{evaluate, CvSummary, EvalReport, MeanStd};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inr::{InrConfig, InrError, InrModel, TrainOptions, TrainingSample, Variant};
use crate::knee::KneeError;
use crate::rng::{derive_seed, stream};
use crate::stats::{self, CorrMethod, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("targets have zero variance; r2 is undefined")]
    ConstantTargets,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("normal equations are singular even after jitter")]
    RankDeficient,
    #[error("cell {0} has no EOL; RUL targets need one")]
    MissingEol(String),
    #[error("cell {cell_id} has {got} cycles, window needs {need}")]
    ShortCell { cell_id: String, got: usize, need: usize },
    #[error("{cells} distinct cells cannot fill {folds} folds")]
    TooFewCells { cells: usize, folds: usize },
    #[error("cross-dataset evaluation needs at least 2 populations, got {0}")]
    TooFewPopulations(usize),
    #[error(transparent)]
    Knee(#[from] KneeError),
    #[error(transparent)]
    Inr(#[from] InrError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Early-stopping patience of the INR regressor, in epochs.
pub const INR_PATIENCE: usize = 10;

/// INR regressor defaults used by the prediction pipeline: a tanh MLP on the
/// raw (min-max normalised) features with full-batch Adam.
pub fn default_inr_regressor(input_dim: usize, seed: u64) -> InrConfig {
    InrConfig {
        variant: Variant::MlpPosenc,
        posenc_frequencies: 0,
        hidden_layers: 2,
        hidden_width: 32,
        dropout_p: 0.1,
        epochs: 500,
        learning_rate: 1e-2,
        seed,
        ..InrConfig::rul_regressor(Variant::MlpPosenc, input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear,
    Polynomial {
        degree: usize,
    },
    Forest(ForestConfig),
    Inr {
        /// `input_dim` is overwritten with the dataset width.
        config: InrConfig,
        /// Monte-Carlo dropout passes per prediction.
        passes: usize,
        /// Fraction of training cells held out for early stopping.
        val_fraction: f64,
    },
}

impl ModelSpec {
    pub fn forest(seed: u64) -> Self {
        ModelSpec::Forest(ForestConfig {
            seed,
            ..ForestConfig::default()
        })
    }

    pub fn inr(seed: u64) -> Self {
        ModelSpec::Inr {
            config: default_inr_regressor(1, seed),
            passes: 30,
            val_fraction: 0.2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::Linear => "linear".into(),
            ModelSpec::Polynomial { degree } => format!("polynomial{degree}"),
            ModelSpec::Forest(_) => "forest".into(),
            ModelSpec::Inr { config, .. } => format!("inr_{}", config.variant.name()),
        }
    }

    pub fn fit(&self, ds: &SupervisedDataset) -> Result<FittedModel, PredictError> {
        if ds.is_empty() {
            return Err(PredictError::EmptyDataset);
        }
        let (x, y) = (ds.x(), ds.y());
        Ok(match self {
            ModelSpec::Linear => FittedModel::Linear(fit_baseline(&x, &y, BaselineKind::Linear)?),
            ModelSpec::Polynomial { degree } => FittedModel::Linear(fit_baseline(&x, &y, BaselineKind::Polynomial { degree: *degree })?),
            ModelSpec::Forest(cfg) => FittedModel::Forest(fit_forest(&x, &y, cfg)?),
            ModelSpec::Inr {
                config,
                passes,
                val_fraction,
            } => {
                let cfg = InrConfig {
                    input_dim: ds.n_features(),
                    output_dim: 1,
                    ..config.clone()
                };
                let model = fit_inr_regressor(ds, &cfg, *val_fraction)?;
                FittedModel::Inr {
                    model,
                    passes: *passes,
                    seed: derive_seed(cfg.seed, 0x3C),
                }
            }
        })
    }
}

/// Trains an INR on `features -> target`. A cell-level share of the training
/// rows is held out for early stopping (patience 10); with fewer than two
/// cells, or `val_fraction` 0, it trains on everything for the full budget.
pub fn fit_inr_regressor(ds: &SupervisedDataset, cfg: &InrConfig, val_fraction: f64) -> Result<InrModel, PredictError> {
    if ds.is_empty() {
        return Err(PredictError::EmptyDataset);
    }
    let samples: Vec<TrainingSample> = ds
        .rows
        .iter()
        .map(|r| TrainingSample::new(r.features.clone(), vec![r.target]))
        .collect();
    let mut cells = ds.cell_ids();
    let n_val = (val_fraction * cells.len() as f64).round() as usize;
    let (train, val): (Vec<TrainingSample>, Vec<TrainingSample>) = if n_val >= 1 && n_val < cells.len() {
        cells.shuffle(&mut stream(derive_seed(cfg.seed, 0x5A), 0));
        let held: std::collections::HashSet<&str> = cells[..n_val].iter().map(String::as_str).collect();
        let (va, tr): (Vec<_>, Vec<_>) = ds.rows.iter().zip(samples).partition(|(r, _)| held.contains(r.cell_id.as_str()));
        (tr.into_iter().map(|p| p.1).collect(), va.into_iter().map(|p| p.1).collect())
    } else {
        (samples, Vec::new())
    };
    let mut model = InrModel::new(cfg.clone())?;
    model.train_with(
        &train,
        &val,
        &TrainOptions {
            patience: Some(INR_PATIENCE),
        },
    )?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearModel),
    Forest(ForestModel),
    Inr { model: InrModel, passes: usize, seed: u64 },
}

impl FittedModel {
    /// Point prediction with its spread. Linear models report σ = 0; the INR
    /// mean is the Monte-Carlo dropout mean.
    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<UncertainPrediction>, PredictError> {
        match self {
            FittedModel::Linear(m) => Ok(xs
                .iter()
                .map(|x| UncertainPrediction {
                    mean: m.predict(x),
                    sigma: 0.0,
                    source: UncertaintySource::Deterministic,
                })
                .collect()),
            FittedModel::Forest(m) => xs.iter().map(|x| m.predict_with_variance(x)).collect(),
            FittedModel::Inr { model, passes, seed } => Ok(model
                .mc_dropout_batch(xs, *passes, *seed)?
                .into_iter()
                .map(|(mean, var)| UncertainPrediction {
                    mean: mean[0],
                    sigma: var[0].max(0.0).sqrt(),
                    source: UncertaintySource::McDropout,
                })
                .collect()),
        }
    }

    pub fn predict_means(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, PredictError> {
        Ok(self.predict_batch(xs)?.into_iter().map(|p| p.mean).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfFold {
    pub row: usize,
    pub fold: usize,
    pub prediction: UncertainPrediction,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub summary: CvSummary,
    /// One entry per dataset row, in row order.
    pub predictions: Vec<OutOfFold>,
}

/// Cell-level k-fold cross-validation.
pub fn cross_validate(ds: &SupervisedDataset, spec: &ModelSpec, n_folds: usize, seed: u64) -> Result<CvReport, PredictError> {
    let folds = cell_level_split(ds, n_folds, seed)?;
    let per_fold: Vec<(EvalReport, Vec<OutOfFold>)> = fold_indices(&folds, n_folds)
        .into_par_iter()
        .enumerate()
        .map(|(f, (train, test))| {
            let model = spec.fit(&ds.subset(&train))?;
            let test_ds = ds.subset(&test);
            let preds = model.predict_batch(&test_ds.x())?;
            let report = evaluate(&preds.iter().map(|p| p.mean).collect::<Vec<_>>(), &test_ds.y())?;
            let oof = test
                .iter()
                .zip(preds)
                .map(|(&row, prediction)| OutOfFold {
                    row,
                    fold: f,
                    prediction,
                    target: ds.rows[row].target,
                })
                .collect();
            Ok((report, oof))
        })
        .collect::<Result<_, PredictError>>()?;
    let mut predictions: Vec<OutOfFold> = Vec::with_capacity(ds.len());
    let mut reports = Vec::with_capacity(n_folds);
    for (r, o) in per_fold {
        reports.push(r);
        predictions.extend(o);
    }
    predictions.sort_by_key(|o| o.row);
    Ok(CvReport {
        model: spec.name(),
        summary: CvSummary::from_folds(reports),
        predictions,
    })
}

/// Train on one dataset, evaluate on another.
pub fn transfer(train: &SupervisedDataset, test: &SupervisedDataset, spec: &ModelSpec) -> Result<EvalReport, PredictError> {
    if test.is_empty() {
        return Err(PredictError::EmptyDataset);
    }
    let model = spec.fit(train)?;
    evaluate(&model.predict_means(&test.x())?, &test.y())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetMatrix {
    pub tags: Vec<String>,
    /// `rmse[i][j]`: trained on `tags[i]`, tested on `tags[j]`.
    pub rmse: Vec<Vec<f64>>,
}

impl CrossDatasetMatrix {
    pub fn mean_diagonal(&self) -> f64 {
        let k = self.tags.len();
        (0..k).map(|i| self.rmse[i][i]).sum::<f64>() / k as f64
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.tags.len();
        let s: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.rmse[i][j])
            .sum();
        s / (k * (k - 1)) as f64
    }
}

/// RMSE for every ordered (train, test) pair of populations. Off-diagonal
/// entries train on the whole source and test on the whole target; diagonal
/// entries are cell-level CV means, since scoring a model on its own
/// training rows would measure memorisation rather than transfer.
pub fn cross_dataset_matrix(
    populations: &[(String, SupervisedDataset)],
    spec: &ModelSpec,
    n_folds: usize,
    seed: u64,
) -> Result<CrossDatasetMatrix, PredictError> {
    let k = populations.len();
    if k < 2 {
        return Err(PredictError::TooFewPopulations(k));
    }
    if let Some((tag, _)) = populations.iter().find(|p| p.1.is_empty()) {
        return Err(PredictError::Config(format!("population `{tag}` is empty")));
    }
    let models: Vec<FittedModel> = populations.par_iter().map(|(_, ds)| spec.fit(ds)).collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                Ok(cross_validate(&populations[i].1, spec, n_folds, seed)?.summary.rmse.mean)
            } else {
                let test = &populations[j].1;
                Ok(evaluate(&models[i].predict_means(&test.x())?, &test.y())?.rmse)
            }
        })
        .collect::<Result<_, PredictError>>()?;
    Ok(CrossDatasetMatrix {
        tags: populations.iter().map(|p| p.0.clone()).collect(),
        rmse: values.chunks(k).map(<[f64]>::to_vec).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub n: usize,
    pub mean_sigma: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `None` when σ or the errors are constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub bins: Vec<CalibrationBin>,
    /// `(retained fraction, RMSE)` keeping the lowest-σ rows first.
    pub curve: Vec<(f64, f64)>,
}

pub const CALIBRATION_BINS: usize = 10;

pub fn calibration_report(sigmas: &[f64], abs_errors: &[f64]) -> Result<CalibrationReport, PredictError> {
    if sigmas.len() != abs_errors.len() {
        return Err(PredictError::LengthMismatch(sigmas.len(), abs_errors.len()));
    }
    let n = sigmas.len();
    if n < CALIBRATION_BINS {
        return Err(PredictError::TooFewRows {
            need: CALIBRATION_BINS,
            got: n,
        });
    }
    if sigmas.iter().chain(abs_errors).any(|v| !v.is_finite()) {
        return Err(PredictError::NonFinite);
    }
    let corr = |m: CorrMethod| match stats::correlation(sigmas, abs_errors, m) {
        Ok(r) => Ok(Some(r.estimate)),
        Err(StatsError::ZeroVariance) => Ok(None),
        Err(e) => Err(PredictError::Stats(e)),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b]));
    let bins = (0..CALIBRATION_BINS)
        .map(|b| {
            let idx = &order[b * n / CALIBRATION_BINS..(b + 1) * n / CALIBRATION_BINS];
            let m = idx.len() as f64;
            CalibrationBin {
                n: idx.len(),
                mean_sigma: idx.iter().map(|&i| sigmas[i]).sum::<f64>() / m,
                rmse: (idx.iter().map(|&i| abs_errors[i].powi(2)).sum::<f64>() / m).sqrt(),
            }
        })
        .collect();
    let mut sse = 0.0;
    let curve = order
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            sse += abs_errors[r].powi(2);
            ((i + 1) as f64 / n as f64, (sse / (i + 1) as f64).sqrt())
        })
        .collect();
    Ok(CalibrationReport {
        pearson: corr(CorrMethod::Pearson)?,
        spearman: corr(CorrMethod::Spearman)?,
        bins,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub name: String,
    /// Mean RMSE increase over the shuffles.
    pub importance: f64,
    pub std: f64,
}

pub const PERMUTATION_REPEATS: usize = 10;

/// Increase in RMSE when each column of the held-out rows is shuffled,
/// averaged over 10 seeded shuffles; sorted by decreasing importance.
pub fn permutation_importance(model: &FittedModel, ds: &SupervisedDataset, seed: u64) -> Result<Vec<FeatureImportance>, PredictError> {
    if ds.len() < 2 {
        return Err(PredictError::TooFewRows { need: 2, got: ds.len() });
    }
    let x = ds.x();
    let y = ds.y();
    let rmse = |xs: &[Vec<f64>]| -> Result<f64, PredictError> {
        let p = model.predict_means(xs)?;
        Ok((p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
    };
    let base = rmse(&x)?;
    let mut out: Vec<FeatureImportance> = (0..ds.n_features())
        .into_par_iter()
        .map(|j| {
            let deltas = (0..PERMUTATION_REPEATS)
                .map(|r| {
                    let mut col: Vec<f64> = x.iter().map(|row| row[j]).collect();
                    col.shuffle(&mut stream(derive_seed(seed, j as u64), r as u64));
                    let shuffled: Vec<Vec<f64>> = x
                        .iter()
                        .zip(&col)
                        .map(|(row, &v)| {
                            let mut row = row.clone();
                            row[j] = v;
                            row
                        })
                        .collect();
                    Ok(rmse(&shuffled)? - base)
                })
                .collect::<Result<Vec<f64>, PredictError>>()?;
            let ms = MeanStd::of(&deltas);
            Ok(FeatureImportance {
                feature: j,
                name: ds.feature_names[j].clone(),
                importance: ms.mean,
                std: ms.std,
            })
        })
        .collect::<Result<_, PredictError>>()?;
    out.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.feature.cmp(&b.feature)));
    Ok(out)
}

/// Cross-validated metrics of one model at several early windows. Each
/// window keeps the cells it can use (a cell already past EOL at the end of
/// the window has no RUL row). With `common_cells`, every window is instead
/// scored on the cells usable at all windows.
pub fn window_sweep(
    cells: &[CellData],
    windows: &[usize],
    base: &DatasetConfig,
    spec: &ModelSpec,
    n_folds: usize,
    seed: u64,
    common_cells: bool,
) -> Result<Vec<(usize, CvReport)>, PredictError> {
    let datasets: Vec<SupervisedDataset> = windows
        .iter()
        .map(|&n| make_dataset(cells, &DatasetConfig { window: n, ..base.clone() }))
        .collect::<Result<_, _>>()?;
    let common: std::collections::HashSet<String> = datasets
        .iter()
        .map(|d| d.cell_ids().into_iter().collect::<std::collections::HashSet<_>>())
        .reduce(|a, b| a.intersection(&b).cloned().collect())
        .unwrap_or_default();
    windows
        .iter()
        .zip(&datasets)
        .map(|(&n, ds)| {
            let keep: Vec<usize> = (0..ds.len())
                .filter(|&i| !common_cells || common.contains(&ds.rows[i].cell_id))
                .collect();
            Ok((n, cross_validate(&ds.subset(&keep), spec, n_folds, seed)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_cells: usize, f: impl Fn(f64, f64, f64) -> f64) -> SupervisedDataset {
        let rows = (0..n_cells)
            .map(|i| {
                let a = ((i * 7919) % 101) as f64 / 100.0;
                let b = ((i * 104_729) % 97) as f64 / 96.0;
                let c = ((i * 1_299_709) % 89) as f64 / 88.0;
                DatasetRow {
                    cell_id: format!("c{i}"),
                    dataset_tag: "t".into(),
                    cycle: 0,
                    features: vec![a, b, c],
                    target: f(a, b, c),
                }
            })
            .collect();
        SupervisedDataset {
            rows,
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            target_kind: TargetKind::Rul,
            early_window: 5,
            leakage_class: LeakageClass::EarlyLife,
            dropped: Vec::new(),
        }
    }

    #[test]
    fn model_spec_round_trips_through_json() {
        for spec in [
            ModelSpec::Linear,
            ModelSpec::Polynomial { degree: 2 },
            ModelSpec::forest(3),
            ModelSpec::inr(4),
        ] {
            let text = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
        }
    }

    #[test]
    fn cv_on_linear_data_is_exact() {
        let ds = toy(40, |a, b, c| 1.0 + 2.0 * a - b + 0.5 * c);
        let r = cross_validate(&ds, &ModelSpec::Linear, 5, 1).unwrap();
        assert!(r.summary.rmse.mean < 1e-9);
        assert_eq!(r.predictions.len(), 40);
        assert!(r.predictions.iter().enumerate().all(|(i, p)| p.row == i));
    }

    #[test]
    fn inr_regressor_fits_linear_target() {
        let ds = toy(120, |a, b, _| 3.0 * a + b);
        let spec = ModelSpec::Inr {
            config: InrConfig {
                dropout_p: 0.0,
                ..default_inr_regressor(3, 5)
            },
            passes: 1,
            val_fraction: 0.2,
        };
        let r = cross_validate(&ds, &spec, 5, 2).unwrap();
        assert!(r.summary.rmse.mean < 0.05 * 4.0, "{:?}", r.summary.rmse);
        assert_eq!(r, cross_validate(&ds, &spec, 5, 2).unwrap());
    }

    #[test]
    fn single_signal_feature_ranks_first() {
        let ds = toy(200, |_, b, _| 5.0 * b);
        let model = ModelSpec::Forest(ForestConfig {
            n_trees: 50,
            seed: 1,
            ..Default::default()
        })
        .fit(&ds)
        .unwrap();
        let imp = permutation_importance(&model, &ds, 9).unwrap();
        assert_eq!(imp[0].name, "b");
        assert!(imp[1..].iter().all(|f| f.importance.abs() < 0.1 * imp[0].importance));
    }

    #[test]
    fn calibration_proportional_sigma() {
        let sig: Vec<f64> = (1..=50).map(|i| i as f64 * 0.1).collect();
        let err: Vec<f64> = sig.iter().map(|s| 2.0 * s).collect();
        let r = calibration_report(&sig, &err).unwrap();
        assert!((r.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.bins.len(), 10);
        assert!(r.curve.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!((r.curve.last().unwrap().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_constant_sigma_still_bins() {
        let err: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = calibration_report(&[0.5; 20], &err).unwrap();
        assert_eq!((r.pearson, r.spearman), (None, None));
        assert_eq!(r.bins.iter().map(|b| b.n).sum::<usize>(), 20);
    }

    #[test]
    fn cross_dataset_shape() {
        let pops = vec![
            ("a".to_string(), toy(30, |a, b, _| a + b)),
            ("b".to_string(), toy(30, |a, b, _| a + b + 1.0)),
        ];
        let m = cross_dataset_matrix(&pops, &ModelSpec::Linear, 3, 0).unwrap();
        assert_eq!(m.rmse.len(), 2);
        assert!(m.rmse.iter().flatten().all(|v| v.is_finite()));
        assert!(m.mean_off_diagonal() > m.mean_diagonal());
        assert!(matches!(
            cross_dataset_matrix(&pops[..1], &ModelSpec::Linear, 3, 0),
            Err(PredictError::TooFewPopulations(1))
        ));
    }
}
