use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use kneesight::inr::{fit_trajectory_with_split, InrConfig, InrModel, Variant};
use kneesight::io::atomic_write;

use super::{load_cells, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, Table};
use crate::Ctx;

#[derive(Serialize)]
struct CellModel<'a> {
    cell_id: &'a str,
    model: &'a InrModel,
}

pub fn run(ctx: &Ctx, input: Option<PathBuf>, variant: Option<Variant>) -> Result<String> {
    let section = &ctx.config.fit_inr;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let variant = variant.unwrap_or(section.variant);
    let mut cfg = match &section.model {
        Some(m) if m.variant == variant => m.clone(),
        Some(m) => InrConfig { variant, ..m.clone() },
        None => InrConfig::capacity(variant),
    };
    cfg.seed = ctx.seed;
    cfg.validate()?;
    if !(0.0..1.0).contains(&section.val_fraction) {
        return Err(CliError::validation("fit_inr.val_fraction must lie in [0, 1)"));
    }
    let mut cells = load_cells(&path)?;
    if let Some(m) = section.max_cells {
        cells.truncate(m);
    }
    let fits: Vec<_> = cells
        .par_iter()
        .map(|c| fit_trajectory_with_split(&c.trajectory, &cfg, section.val_fraction))
        .collect::<std::result::Result<_, _>>()?;

    let mut curves = Table::new(&["cell_id", "epoch", "train_mse", "val_mse"]);
    let mut summary = Table::new(&["cell_id", "variant", "epochs", "best_epoch", "train_mse", "val_mse", "rmse"]);
    let mut rmses = Vec::with_capacity(cells.len());
    for (c, (model, report)) in cells.iter().zip(&fits) {
        let id = &c.trajectory.cell_id;
        for (e, tr) in report.train_loss.iter().enumerate() {
            curves.push(vec![
                id.clone(),
                (e + 1).to_string(),
                num(*tr),
                num(report.val_loss.get(e).copied().unwrap_or(f64::NAN)),
            ]);
        }
        let mut sq = 0.0;
        for &(k, soh) in &c.trajectory.points {
            sq += (model.predict(&[k as f64])? - soh).powi(2);
        }
        let rmse = (sq / c.trajectory.len() as f64).sqrt();
        rmses.push(rmse);
        let best = report.best_epoch;
        summary.push(vec![
            id.clone(),
            variant.name().into(),
            report.train_loss.len().to_string(),
            (best + 1).to_string(),
            num(report.train_loss.get(best).copied().unwrap_or(f64::NAN)),
            num(report.val_loss.get(best).copied().unwrap_or(f64::NAN)),
            num(rmse),
        ]);
    }
    let models: Vec<CellModel> = cells
        .iter()
        .zip(&fits)
        .map(|(c, (m, _))| CellModel {
            cell_id: &c.trajectory.cell_id,
            model: m,
        })
        .collect();
    let stem = format!("inr_{}", variant.name());
    let json = ctx.artifact(&format!("{stem}.json"));
    atomic_write(&json, serde_json::to_string(&models)?.as_bytes())?;
    curves.write(&ctx.artifact(&format!("{stem}_curves.csv")))?;
    summary.write(&ctx.artifact(&format!("{stem}_summary.csv")))?;
    let mean_rmse = rmses.iter().sum::<f64>() / rmses.len() as f64;
    Ok(format!(
        "fit-inr: {} cells, variant {}, mean RMSE {mean_rmse:.5} -> {}",
        cells.len(),
        variant.name(),
        json.display()
    ))
}
