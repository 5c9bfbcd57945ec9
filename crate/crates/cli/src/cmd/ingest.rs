use std::path::PathBuf;

use rayon::prelude::*;

use kneesight::features::cell_feature_rows;
use kneesight::ingest::{load_timeseries, segment_cycles, write_cycle_table, ColumnMapping};

use crate::artifacts;
use crate::error::{CliError, Result};
use crate::Ctx;

pub fn run(ctx: &Ctx, input: Option<PathBuf>, mapping: Option<PathBuf>) -> Result<String> {
    let cfg = &ctx.config.ingest;
    let input = input
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| CliError::validation("ingest needs --input <raw.csv>"))?;
    let mapping_path = mapping
        .or_else(|| cfg.mapping.clone())
        .ok_or_else(|| CliError::validation("ingest needs --mapping <mapping.json>"))?;
    for p in [&input, &mapping_path] {
        if !p.is_file() {
            return Err(CliError::validation(format!("{}: no such file", p.display())));
        }
    }
    let mapping = ColumnMapping::from_json_file(&mapping_path)?;
    let seg = cfg.segmentation.unwrap_or_else(|| mapping.segmentation_config());
    let series = load_timeseries(&input, &mapping)?;
    let per_cell: Vec<_> = series
        .par_iter()
        .map(|s| {
            let cycles = segment_cycles(s, &seg)?;
            Ok(cell_feature_rows(&cycles, &s.dataset_tag, &cfg.descriptors, cfg.q0)?)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<_> = per_cell.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(CliError::validation(format!("{}: no discharge cycles found", input.display())));
    }
    let out = ctx.artifact(artifacts::CYCLES);
    write_cycle_table(&rows, &out)?;
    Ok(format!(
        "ingest: {} cells, {} discharge cycles -> {}",
        series.len(),
        rows.len(),
        out.display()
    ))
}
