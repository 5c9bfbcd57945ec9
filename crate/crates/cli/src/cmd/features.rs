use std::path::PathBuf;

use super::{load_cells, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::Result;
use crate::table::{num, opt_int, Table};
use crate::Ctx;

pub fn run(ctx: &Ctx, input: Option<PathBuf>) -> Result<String> {
    let path = ctx.input(&input, &ctx.config.features.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let cells = load_cells(&path)?;
    let mut traj = Table::new(&["cell_id", "dataset_tag", "cycle_index", "soh"]);
    let mut summary = Table::new(&[
        "cell_id",
        "dataset_tag",
        "n_cycles",
        "first_cycle",
        "last_cycle",
        "capacity0",
        "soh_last",
        "eol_cycle",
    ]);
    for c in &cells {
        let t = &c.trajectory;
        for &(k, soh) in &t.points {
            traj.push(vec![t.cell_id.clone(), t.dataset_tag.clone(), k.to_string(), num(soh)]);
        }
        let (first, last) = (t.points[0], *t.points.last().unwrap());
        summary.push(vec![
            t.cell_id.clone(),
            t.dataset_tag.clone(),
            t.len().to_string(),
            first.0.to_string(),
            last.0.to_string(),
            num(t.q0),
            num(last.1),
            opt_int(t.eol_cycle),
        ]);
    }
    traj.write(&ctx.artifact(artifacts::TRAJECTORIES))?;
    summary.write(&ctx.artifact(artifacts::CELLS))?;
    let with_eol = cells.iter().filter(|c| c.trajectory.eol_cycle.is_some()).count();
    Ok(format!(
        "features: {} cells ({with_eol} reach EOL), {} points -> {}",
        cells.len(),
        traj.len(),
        ctx.artifact(artifacts::CELLS).display()
    ))
}
