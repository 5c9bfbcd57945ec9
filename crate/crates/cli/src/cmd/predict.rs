use std::path::PathBuf;

use kneesight::predict::{
    calibration_report, cell_level_split, cross_validate, fit_least_squares, fold_indices, make_dataset, permutation_importance, CellData,
    CvReport, DatasetConfig, LeakageClass, MeanStd, ModelSpec, SupervisedDataset, UncertaintySource,
};

use super::{annotate_knees, load_cells, load_knees, reseed, reseed_dataset, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, opt_num, Table};
use crate::Ctx;

fn default_models(seed: u64) -> Vec<ModelSpec> {
    vec![ModelSpec::Linear, ModelSpec::forest(seed), ModelSpec::inr(seed)]
}

fn source_name(s: UncertaintySource) -> &'static str {
    match s {
        UncertaintySource::Deterministic => "deterministic",
        UncertaintySource::ForestEnsemble => "forest_ensemble",
        UncertaintySource::McDropout => "mc_dropout",
    }
}

/// Per-cell linear capacity-versus-cycle fit on the first `h` cycles, scored
/// on the remaining ones: `(n_cells, RMSE, MAPE %)`.
fn horizon_baseline(cells: &[CellData], h: usize) -> Result<(usize, MeanStd, MeanStd)> {
    let mut rmse = Vec::new();
    let mut mape = Vec::new();
    for c in cells.iter().filter(|c| c.trajectory.len() > h) {
        let pts = &c.trajectory.points;
        let rows: Vec<Vec<f64>> = pts[..h].iter().map(|p| vec![p.0 as f64]).collect();
        let y: Vec<f64> = pts[..h].iter().map(|p| p.1).collect();
        let (b0, b) = fit_least_squares(&rows, &y)?;
        let rest = &pts[h..];
        let err: Vec<(f64, f64)> = rest.iter().map(|&(k, s)| (b0 + b[0] * k as f64 - s, s)).collect();
        rmse.push((err.iter().map(|e| e.0 * e.0).sum::<f64>() / err.len() as f64).sqrt());
        let rel: Vec<f64> = err.iter().filter(|e| e.1 != 0.0).map(|e| (e.0 / e.1).abs()).collect();
        if !rel.is_empty() {
            mape.push(100.0 * rel.iter().sum::<f64>() / rel.len() as f64);
        }
    }
    Ok((rmse.len(), MeanStd::of(&rmse), MeanStd::of(&mape)))
}

fn first_forest(models: &[ModelSpec], seed: u64) -> ModelSpec {
    models
        .iter()
        .find(|m| matches!(m, ModelSpec::Forest(_)))
        .cloned()
        .unwrap_or_else(|| ModelSpec::forest(seed))
}

pub fn run(ctx: &Ctx, input: Option<PathBuf>, n_early: Option<usize>) -> Result<String> {
    let section = &ctx.config.predict;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let mut cells = load_cells(&path)?;
    let knees = match &section.knees {
        Some(p) => Some(ctx.input(&None, &Some(p.clone()), artifacts::KNEES, "knee")?),
        None => Some(ctx.artifact(artifacts::KNEES)).filter(|p| p.is_file()),
    };
    if let Some(k) = &knees {
        annotate_knees(&mut cells, &load_knees(k)?);
    }
    let windows = n_early.map_or_else(|| section.windows.clone(), |n| vec![n]);
    if windows.is_empty() || windows.contains(&0) {
        return Err(CliError::validation("predict: windows must be non-empty and positive"));
    }
    let models: Vec<ModelSpec> = section
        .models
        .clone()
        .unwrap_or_else(|| default_models(ctx.seed))
        .iter()
        .map(|m| reseed(m, ctx.seed))
        .collect();
    let base = reseed_dataset(&section.dataset, ctx.seed);
    let dataset_at = |window: usize, leakage_class: LeakageClass| -> Result<SupervisedDataset> {
        Ok(make_dataset(
            &cells,
            &DatasetConfig {
                window,
                leakage_class,
                ..base.clone()
            },
        )?)
    };

    let mut table = Table::new(&["model", "input_cycles", "rmse", "mae", "r2"]);
    let mut detail = Table::new(&[
        "model",
        "input_cycles",
        "n_rows",
        "n_cells",
        "rmse_mean",
        "rmse_std",
        "mae_mean",
        "mae_std",
        "mape_mean",
        "mape_std",
        "r2_mean",
        "r2_std",
    ]);
    let mut preds = Table::new(&[
        "model",
        "input_cycles",
        "cell_id",
        "cycle",
        "fold",
        "target",
        "prediction",
        "sigma",
        "source",
    ]);
    let mut calib = Table::new(&["model", "input_cycles", "bin", "n", "mean_sigma", "rmse", "pearson", "spearman"]);
    let mut curve = Table::new(&["model", "input_cycles", "retained_fraction", "rmse"]);
    let mut early_at_ablation: Option<SupervisedDataset> = None;
    for &n in &windows {
        let ds = dataset_at(n, LeakageClass::EarlyLife)?;
        for (id, why) in &ds.dropped {
            log::info!("window {n}: {id} dropped ({why})");
        }
        for spec in &models {
            let cv: CvReport = cross_validate(&ds, spec, section.folds, ctx.seed)?;
            let s = &cv.summary;
            let (model, nn) = (cv.model.clone(), n.to_string());
            table.push(vec![model.clone(), nn.clone(), num(s.rmse.mean), num(s.mae.mean), num(s.r2.mean)]);
            detail.push(vec![
                model.clone(),
                nn.clone(),
                ds.len().to_string(),
                ds.cell_ids().len().to_string(),
                num(s.rmse.mean),
                num(s.rmse.std),
                num(s.mae.mean),
                num(s.mae.std),
                num(s.mape.mean),
                num(s.mape.std),
                num(s.r2.mean),
                num(s.r2.std),
            ]);
            for o in &cv.predictions {
                let row = &ds.rows[o.row];
                preds.push(vec![
                    model.clone(),
                    nn.clone(),
                    row.cell_id.clone(),
                    row.cycle.to_string(),
                    o.fold.to_string(),
                    num(o.target),
                    num(o.prediction.mean),
                    num(o.prediction.sigma),
                    source_name(o.prediction.source).into(),
                ]);
            }
            let sigmas: Vec<f64> = cv.predictions.iter().map(|o| o.prediction.sigma).collect();
            if cv
                .predictions
                .iter()
                .all(|o| o.prediction.source == UncertaintySource::Deterministic)
            {
                continue;
            }
            let errors: Vec<f64> = cv.predictions.iter().map(|o| (o.prediction.mean - o.target).abs()).collect();
            match calibration_report(&sigmas, &errors) {
                Ok(r) => {
                    for (b, bin) in r.bins.iter().enumerate() {
                        calib.push(vec![
                            model.clone(),
                            nn.clone(),
                            b.to_string(),
                            bin.n.to_string(),
                            num(bin.mean_sigma),
                            num(bin.rmse),
                            opt_num(r.pearson),
                            opt_num(r.spearman),
                        ]);
                    }
                    for (f, e) in r.curve {
                        curve.push(vec![model.clone(), nn.clone(), num(f), num(e)]);
                    }
                }
                Err(e) => log::warn!("{model} at N = {n}: no calibration ({e})"),
            }
        }
        if n == section.ablation_window {
            early_at_ablation = Some(ds);
        }
    }

    let forest = first_forest(&models, ctx.seed);
    let early = match early_at_ablation {
        Some(ds) => ds,
        None => dataset_at(section.ablation_window, LeakageClass::EarlyLife)?,
    };
    let full = dataset_at(section.ablation_window, LeakageClass::FullTrajectory)?;
    let mut ablation = Table::new(&["feature_set", "rmse", "mae", "r2"]);
    for (name, ds) in [("early_life", &early), ("full_trajectory", &full)] {
        let s = cross_validate(ds, &forest, section.folds, ctx.seed)?.summary;
        ablation.push(vec![name.into(), num(s.rmse.mean), num(s.mae.mean), num(s.r2.mean)]);
    }

    let mut importance = Table::new(&["rank", "feature", "importance", "std"]);
    if section.importance {
        let folds = cell_level_split(&early, section.folds, ctx.seed)?;
        let (train, test) = fold_indices(&folds, section.folds).swap_remove(0);
        let model = forest.fit(&early.subset(&train))?;
        for (r, f) in permutation_importance(&model, &early.subset(&test), ctx.seed)?.iter().enumerate() {
            importance.push(vec![(r + 1).to_string(), f.name.clone(), num(f.importance), num(f.std)]);
        }
    }

    let mut horizon = Table::new(&["horizon_cycles", "N_cells", "RMSE_mean", "RMSE_std", "MAPE_mean", "MAPE_std"]);
    for &h in &section.horizons {
        if h < 2 {
            return Err(CliError::validation("predict: horizons must be at least 2 cycles"));
        }
        let (n, r, m) = horizon_baseline(&cells, h)?;
        if n == 0 {
            log::warn!("horizon {h}: no cell is longer than the horizon");
            continue;
        }
        horizon.push(vec![h.to_string(), n.to_string(), num(r.mean), num(r.std), num(m.mean), num(m.std)]);
    }

    let out = ctx.artifact(artifacts::EARLY_LIFE_RUL);
    table.write(&out)?;
    detail.write(&ctx.artifact(artifacts::EARLY_LIFE_DETAIL))?;
    preds.write(&ctx.artifact(artifacts::PREDICTIONS))?;
    calib.write(&ctx.artifact(artifacts::CALIBRATION))?;
    curve.write(&ctx.artifact(artifacts::CONFIDENCE_CURVE))?;
    ablation.write(&ctx.artifact(artifacts::FEATURE_ABLATION))?;
    importance.write(&ctx.artifact(artifacts::IMPORTANCE))?;
    horizon.write(&ctx.artifact(artifacts::HORIZON_BASELINE))?;
    Ok(format!(
        "predict: {} cells, {} models x windows {:?}, {}-fold cell-level CV -> {}",
        cells.len(),
        models.len(),
        windows,
        section.folds,
        out.display()
    ))
}
