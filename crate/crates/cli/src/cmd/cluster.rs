use std::path::PathBuf;

use kneesight::stats::{kmeans, pca};

use super::{load_cells, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, Table};
use crate::Ctx;

pub fn run(ctx: &Ctx, input: Option<PathBuf>) -> Result<String> {
    let section = &ctx.config.cluster;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    if section.grid < 2 {
        return Err(CliError::validation("cluster.grid must be at least 2"));
    }
    let cells = load_cells(&path)?;
    let kept: Vec<_> = cells.iter().filter(|c| c.trajectory.len() >= section.grid).collect();
    if kept.len() < cells.len() {
        log::info!(
            "cluster: {} cells shorter than {} cycles skipped",
            cells.len() - kept.len(),
            section.grid
        );
    }
    let matrix: Vec<Vec<f64>> = kept
        .iter()
        .map(|c| c.trajectory.points[..section.grid].iter().map(|p| p.1).collect())
        .collect();
    let p = pca(&matrix, section.components)?;
    let km = kmeans(&p.scores, section.k, ctx.seed)?;

    let header: Vec<String> = ["cell_id", "dataset_tag", "cluster"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=section.components).map(|i| format!("pc{i}")))
        .collect();
    let mut clusters = Table::new(&header);
    for ((c, label), scores) in kept.iter().zip(&km.labels).zip(&p.scores) {
        let t = &c.trajectory;
        clusters.push(
            [t.cell_id.clone(), t.dataset_tag.clone(), label.to_string()]
                .into_iter()
                .chain(scores.iter().map(|s| num(*s)))
                .collect(),
        );
    }
    let mut comps = Table::new(&["component", "eigenvalue", "explained_variance_ratio"]);
    for (i, (l, r)) in p.eigenvalues.iter().zip(&p.explained_variance_ratio).enumerate() {
        comps.push(vec![(i + 1).to_string(), num(*l), num(*r)]);
    }
    let mut inertia = Table::new(&["iteration", "inertia"]);
    for (i, v) in km.inertia_history.iter().enumerate() {
        inertia.push(vec![(i + 1).to_string(), num(*v)]);
    }
    let out = ctx.artifact(artifacts::CLUSTERS);
    clusters.write(&out)?;
    comps.write(&ctx.artifact(artifacts::PCA))?;
    inertia.write(&ctx.artifact(artifacts::KMEANS_INERTIA))?;
    let explained: f64 = p.explained_variance_ratio.iter().sum();
    Ok(format!(
        "cluster: {} cells, {} components explain {:.1}%, k = {}, inertia {:.5} -> {}",
        kept.len(),
        section.components,
        100.0 * explained,
        section.k,
        km.inertia,
        out.display()
    ))
}
