pub mod cluster;
pub mod features;
pub mod fit_inr;
pub mod ingest;
pub mod knee;
pub mod predict;
pub mod reliability;
pub mod report;
pub mod stats;
pub mod synth;
pub mod xeval;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use kneesight::features::{build_trajectory, group_by_cell, CycleFeatures, Q0Rule};
use kneesight::ingest::read_cycle_table;
use kneesight::inr::InrConfig;
use kneesight::predict::{CellData, DatasetConfig, ForestConfig, ModelSpec};

use crate::error::{CliError, Result};
use crate::table::{parse_opt_usize, Table};

/// Cells of a per-cycle table in first-appearance order. SOH is taken from
/// the table, so the initial-capacity rule applied at ingest is kept.
pub fn load_cells(path: &Path) -> Result<Vec<CellData>> {
    let rows = read_cycle_table(path).map_err(|e| CliError::schema(path, e))?;
    if rows.is_empty() {
        return Err(CliError::validation(format!("{}: no cycles", path.display())));
    }
    group_by_cell(&rows)
        .into_par_iter()
        .map(|mut rows: Vec<CycleFeatures>| {
            rows.sort_by_key(|r| r.cycle_index);
            let first = &rows[0];
            let q0 = if first.soh > 0.0 { first.q_ah / first.soh } else { first.q_ah };
            let trajectory = build_trajectory(&rows, Q0Rule::Rated(q0))?;
            Ok(CellData { trajectory, rows })
        })
        .collect()
}

/// Dataset tags in first-appearance order.
pub fn dataset_tags(cells: &[CellData]) -> Vec<String> {
    let mut tags: Vec<String> = Vec::new();
    for c in cells {
        if !tags.contains(&c.trajectory.dataset_tag) {
            tags.push(c.trajectory.dataset_tag.clone());
        }
    }
    tags
}

/// Knee cycle per cell id from a knee table; cells without a knee map to `None`.
pub fn load_knees(path: &Path) -> Result<HashMap<String, Option<usize>>> {
    let t = Table::read(path)?;
    let idx = t.require(path, &["cell_id", "knee_cycle"])?;
    t.rows
        .iter()
        .map(|r| Ok((r[idx[0]].clone(), parse_opt_usize(path, &r[idx[1]], "knee cycle")?)))
        .collect()
}

/// Attaches detected knees to the trajectories, where present.
pub fn annotate_knees(cells: &mut [CellData], knees: &HashMap<String, Option<usize>>) {
    for c in cells {
        if let Some(k) = knees.get(&c.trajectory.cell_id) {
            c.trajectory.knee_cycle = *k;
        }
    }
}

/// Subcommands that produce a per-cycle table, for missing-artifact messages.
pub const CYCLES_PRODUCER: &str = "synth` or `ingest";

/// `spec` with every seed replaced by the run seed.
pub fn reseed(spec: &ModelSpec, seed: u64) -> ModelSpec {
    match spec.clone() {
        ModelSpec::Forest(cfg) => ModelSpec::Forest(ForestConfig { seed, ..cfg }),
        ModelSpec::Inr {
            config,
            passes,
            val_fraction,
        } => ModelSpec::Inr {
            config: InrConfig { seed, ..config },
            passes,
            val_fraction,
        },
        other => other,
    }
}

/// Dataset config with the surrogate seeds replaced by the run seed.
pub fn reseed_dataset(cfg: &DatasetConfig, seed: u64) -> DatasetConfig {
    let mut cfg = cfg.clone();
    cfg.knee.inr.seed = seed;
    cfg.early_knee_inr.seed = seed;
    cfg
}
