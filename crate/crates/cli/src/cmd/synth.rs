use kneesight::ingest::write_cycle_table;
use kneesight::rng::derive_seed;
use kneesight::synth::{gen_population, gen_weibull, PopulationSpec};

use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, opt_int, Table};
use crate::Ctx;

pub fn run(ctx: &Ctx, weibull_flag: bool) -> Result<String> {
    let cfg = &ctx.config.synth;
    if weibull_flag || cfg.weibull_only {
        let w = &cfg.weibull;
        let sample = gen_weibull(w.shape, w.scale, w.n, ctx.seed)?;
        let mut t = Table::new(&["cell_id", "dataset_tag", "lifetime", "censored"]);
        for (i, l) in sample.values().iter().enumerate() {
            t.push(vec![
                format!("{}-{i:04}", w.dataset_tag),
                w.dataset_tag.clone(),
                num(l.value),
                l.censored.to_string(),
            ]);
        }
        let path = ctx.artifact(artifacts::LIFETIMES);
        t.write(&path)?;
        return Ok(format!(
            "synth: {} Weibull lifetimes (k = {}, λ = {}) -> {}",
            w.n,
            w.shape,
            w.scale,
            path.display()
        ));
    }
    if cfg.populations.is_empty() {
        return Err(CliError::validation("synth: no populations configured"));
    }
    let mut rows = Vec::new();
    let mut truth = Table::new(&["cell_id", "dataset_tag", "knee_cycle", "eol_cycle", "length"]);
    let mut n_cells = 0;
    for (i, pop) in cfg.populations.iter().enumerate() {
        let spec = PopulationSpec {
            seed: derive_seed(ctx.seed, i as u64),
            ..pop.clone()
        };
        for cell in gen_population(&spec)? {
            let t = &cell.trajectory;
            truth.push(vec![
                t.cell_id.clone(),
                t.dataset_tag.clone(),
                opt_int(t.knee_cycle),
                opt_int(t.eol_cycle),
                t.len().to_string(),
            ]);
            rows.extend(cell.rows);
            n_cells += 1;
        }
    }
    let cycles = ctx.artifact(artifacts::CYCLES);
    write_cycle_table(&rows, &cycles)?;
    truth.write(&ctx.artifact(artifacts::TRUTH))?;
    Ok(format!(
        "synth: {} populations, {n_cells} cells, {} cycles -> {}",
        cfg.populations.len(),
        rows.len(),
        cycles.display()
    ))
}
