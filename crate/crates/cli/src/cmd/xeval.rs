use std::path::PathBuf;

use kneesight::predict::{cross_dataset_matrix, make_dataset, DatasetConfig, ModelSpec, SupervisedDataset};

use super::{dataset_tags, load_cells, reseed, reseed_dataset, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, Table};
use crate::Ctx;

pub fn run(ctx: &Ctx, input: Option<PathBuf>, n_early: Option<usize>) -> Result<String> {
    let section = &ctx.config.xeval;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let cells = load_cells(&path)?;
    let tags = dataset_tags(&cells);
    if tags.len() < 2 {
        return Err(CliError::validation(format!(
            "xeval needs at least 2 dataset tags, found {}",
            tags.len()
        )));
    }
    let cfg = DatasetConfig {
        window: n_early.unwrap_or(section.window),
        ..reseed_dataset(&section.dataset, ctx.seed)
    };
    let spec = reseed(section.model.as_ref().unwrap_or(&ModelSpec::forest(ctx.seed)), ctx.seed);
    let populations: Vec<(String, SupervisedDataset)> = tags
        .iter()
        .map(|tag| {
            let own: Vec<_> = cells.iter().filter(|c| &c.trajectory.dataset_tag == tag).cloned().collect();
            Ok((tag.clone(), make_dataset(&own, &cfg)?))
        })
        .collect::<Result<_>>()?;
    let m = cross_dataset_matrix(&populations, &spec, section.folds, ctx.seed)?;
    let mut t = Table::new(
        &std::iter::once("train".to_string())
            .chain(m.tags.iter().cloned())
            .collect::<Vec<_>>(),
    );
    for (tag, row) in m.tags.iter().zip(&m.rmse) {
        t.push(std::iter::once(tag.clone()).chain(row.iter().map(|v| num(*v))).collect());
    }
    let out = ctx.artifact(artifacts::CROSS_DATASET);
    t.write(&out)?;
    Ok(format!(
        "xeval: {} datasets, {} at N = {}, mean RMSE diagonal {:.4} off-diagonal {:.4} -> {}",
        m.tags.len(),
        spec.name(),
        cfg.window,
        m.mean_diagonal(),
        m.mean_off_diagonal(),
        out.display()
    ))
}
