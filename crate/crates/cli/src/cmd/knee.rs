use std::path::PathBuf;

use rayon::prelude::*;

use kneesight::knee::{detect_knee, KneeConfig, KneeError};

use super::{load_cells, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::Result;
use crate::table::{num, opt_int, Table};
use crate::Ctx;

pub fn run(ctx: &Ctx, input: Option<PathBuf>) -> Result<String> {
    let section = &ctx.config.knee;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let mut cfg: KneeConfig = section.detector.clone();
    cfg.inr.seed = ctx.seed;
    cfg.validate()?;
    let cells = load_cells(&path)?;
    let reports: Vec<_> = cells
        .par_iter()
        .map(|c| match detect_knee(&c.trajectory, &cfg) {
            Ok(r) => Ok(Some(r)),
            Err(KneeError::TooShort { got, need }) => {
                log::info!("{}: {got} cycles, knee detection needs {need}", c.trajectory.cell_id);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut knees = Table::new(&["cell_id", "knee_cycle", "threshold", "smoother"]);
    let mut curvature = Table::new(&["cell_id", "cycle_index", "curvature"]);
    let mut found = 0;
    for (c, r) in cells.iter().zip(&reports) {
        let id = &c.trajectory.cell_id;
        match r {
            Some(r) => {
                found += usize::from(r.knee_cycle.is_some());
                knees.push(vec![
                    id.clone(),
                    opt_int(r.knee_cycle),
                    num(r.threshold_used),
                    r.smoother_used.name().into(),
                ]);
                for &(k, v) in &r.curvature_series {
                    curvature.push(vec![id.clone(), k.to_string(), num(v)]);
                }
            }
            None => knees.push(vec![id.clone(), String::new(), String::new(), cfg.smoother.name().into()]),
        }
    }
    let out = ctx.artifact(artifacts::KNEES);
    knees.write(&out)?;
    curvature.write(&ctx.artifact(artifacts::CURVATURE))?;
    Ok(format!(
        "knee: {found} of {} cells have a knee ({}) -> {}",
        cells.len(),
        cfg.smoother.name(),
        out.display()
    ))
}
