use std::path::PathBuf;

use kneesight::predict::CellData;
use kneesight::rng::derive_seed;
use kneesight::stats::{self, bootstrap_ci, correlation, effect_sizes, group_test, CorrMethod, GroupTest};

use super::{annotate_knees, dataset_tags, load_cells, load_knees, CYCLES_PRODUCER};
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, opt_num, Table};
use crate::Ctx;

const SUMMARY_COLUMNS: [&str; 11] = [
    "N_cells",
    "EOL_mean",
    "EOL_std",
    "knee_mean",
    "knee_std",
    "capacity0_mean",
    "capacity0_std",
    "Pearson(EOL,knee)",
    "Spearman(EOL,knee)",
    "Pearson(EOL,capacity0)",
    "Spearman(EOL,capacity0)",
];

const CI_COLUMNS: [&str; 10] = [
    "scope",
    "dataset",
    "pair",
    "pearson",
    "pearson_ci_low",
    "pearson_ci_high",
    "spearman",
    "spearman_ci_low",
    "spearman_ci_high",
    "N",
];

/// Paired observations of one population.
struct Columns {
    eol: Vec<f64>,
    knee: Vec<f64>,
    capacity0: Vec<f64>,
    /// `(EOL, knee)` for cells with both.
    eol_knee: (Vec<f64>, Vec<f64>),
    /// `(EOL, capacity0)` for cells with an EOL.
    eol_q0: (Vec<f64>, Vec<f64>),
}

impl Columns {
    fn of<'a>(cells: impl Iterator<Item = &'a CellData>) -> Self {
        let mut c = Columns {
            eol: Vec::new(),
            knee: Vec::new(),
            capacity0: Vec::new(),
            eol_knee: (Vec::new(), Vec::new()),
            eol_q0: (Vec::new(), Vec::new()),
        };
        for cell in cells {
            let t = &cell.trajectory;
            if let Some(k) = t.knee_cycle {
                c.knee.push(k as f64);
            }
            if let Some(e) = t.eol_cycle {
                c.eol.push(e as f64);
                c.capacity0.push(t.q0);
                c.eol_q0.0.push(e as f64);
                c.eol_q0.1.push(t.q0);
                if let Some(k) = t.knee_cycle {
                    c.eol_knee.0.push(e as f64);
                    c.eol_knee.1.push(k as f64);
                }
            }
        }
        c
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    match x.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (x[0], f64::NAN),
        _ => (stats::mean(x), stats::variance(x).sqrt()),
    }
}

fn point(x: &[f64], y: &[f64], m: CorrMethod) -> Option<f64> {
    correlation(x, y, m).ok().map(|r| r.estimate)
}

fn summary_row(c: &Columns) -> Vec<String> {
    let (em, es) = mean_std(&c.eol);
    let (km, ks) = mean_std(&c.knee);
    let (qm, qs) = mean_std(&c.capacity0);
    let (ek, eq) = (&c.eol_knee, &c.eol_q0);
    vec![
        c.eol.len().to_string(),
        num(em),
        num(es),
        num(km),
        num(ks),
        num(qm),
        num(qs),
        opt_num(point(&ek.0, &ek.1, CorrMethod::Pearson)),
        opt_num(point(&ek.0, &ek.1, CorrMethod::Spearman)),
        opt_num(point(&eq.0, &eq.1, CorrMethod::Pearson)),
        opt_num(point(&eq.0, &eq.1, CorrMethod::Spearman)),
    ]
}

fn ci_fields(x: &[f64], y: &[f64], m: CorrMethod, b: usize, level: f64, seed: u64) -> Result<[String; 3]> {
    match bootstrap_ci(x, y, m, b, level, seed) {
        Ok(r) => Ok([num(r.estimate), opt_num(r.ci_low), opt_num(r.ci_high)]),
        Err(e @ stats::StatsError::Config(_)) => Err(e.into()),
        Err(e) => {
            log::warn!("{} bootstrap on {} pairs: {e}", m.name(), x.len());
            Ok([opt_num(point(x, y, m)), String::new(), String::new()])
        }
    }
}

pub fn run(ctx: &Ctx, input: Option<PathBuf>) -> Result<String> {
    let section = &ctx.config.stats;
    let path = ctx.input(&input, &section.input, artifacts::CYCLES, CYCLES_PRODUCER)?;
    let knees_path = ctx.input(&None, &section.knees, artifacts::KNEES, "knee")?;
    let mut cells = load_cells(&path)?;
    annotate_knees(&mut cells, &load_knees(&knees_path)?);
    let tags = dataset_tags(&cells);

    let global = Columns::of(cells.iter());
    if global.eol.is_empty() {
        return Err(CliError::validation("stats: no cell reaches EOL"));
    }
    let per_tag: Vec<Columns> = tags
        .iter()
        .map(|tag| Columns::of(cells.iter().filter(|c| &c.trajectory.dataset_tag == tag)))
        .collect();

    let mut summary = Table::new(&SUMMARY_COLUMNS);
    summary.push(summary_row(&global));
    let mut by_dataset = Table::new(&std::iter::once("dataset").chain(SUMMARY_COLUMNS).collect::<Vec<_>>());
    for (tag, c) in tags.iter().zip(&per_tag) {
        by_dataset.push(std::iter::once(tag.clone()).chain(summary_row(c)).collect());
    }

    let mut ci = Table::new(&CI_COLUMNS);
    let scopes = std::iter::once(("global", "all", &global)).chain(tags.iter().zip(&per_tag).map(|(t, c)| ("dataset", t.as_str(), c)));
    let mut stream_index = 0u64;
    for (scope, tag, c) in scopes {
        for (pair, (x, y)) in [("EOL_vs_knee", &c.eol_knee), ("EOL_vs_capacity0", &c.eol_q0)] {
            let mut row = vec![scope.to_string(), tag.to_string(), pair.to_string()];
            for m in [CorrMethod::Pearson, CorrMethod::Spearman] {
                row.extend(ci_fields(
                    x,
                    y,
                    m,
                    section.bootstrap,
                    section.level,
                    derive_seed(ctx.seed, stream_index),
                )?);
                stream_index += 1;
            }
            row.push(x.len().to_string());
            ci.push(row);
        }
    }

    let mut groups = Table::new(&["variable", "test", "statistic", "p_value", "df_between", "df_within"]);
    let mut effects = Table::new(&["variable", "dataset_a", "dataset_b", "cohens_d", "cliffs_delta"]);
    if tags.len() >= 2 {
        for (variable, pick) in [("EOL", 0usize), ("knee", 1), ("capacity0", 2)] {
            let col = |c: &Columns| match pick {
                0 => c.eol.clone(),
                1 => c.knee.clone(),
                _ => c.capacity0.clone(),
            };
            let data: Vec<Vec<f64>> = per_tag.iter().map(col).collect();
            for test in [GroupTest::AnovaF, GroupTest::KruskalWallis] {
                match group_test(&data, test) {
                    Ok(r) => groups.push(vec![
                        variable.into(),
                        test.name().into(),
                        num(r.statistic),
                        num(r.p_value),
                        num(r.df.0),
                        num(r.df.1),
                    ]),
                    Err(e) => log::warn!("{variable} {}: {e}", test.name()),
                }
            }
            for i in 0..tags.len() {
                for j in i + 1..tags.len() {
                    if let Ok(es) = effect_sizes(&data[i], &data[j]) {
                        effects.push(vec![
                            variable.into(),
                            tags[i].clone(),
                            tags[j].clone(),
                            opt_num(es.cohens_d),
                            num(es.cliffs_delta),
                        ]);
                    }
                }
            }
        }
    }

    let out = ctx.artifact(artifacts::KNEE_SUMMARY);
    summary.write(&out)?;
    by_dataset.write(&ctx.artifact(artifacts::KNEE_BY_DATASET))?;
    ci.write(&ctx.artifact(artifacts::CORRELATION_CI))?;
    groups.write(&ctx.artifact(artifacts::GROUP_TESTS))?;
    effects.write(&ctx.artifact(artifacts::EFFECT_SIZES))?;
    let r = point(&global.eol_knee.0, &global.eol_knee.1, CorrMethod::Pearson);
    Ok(format!(
        "stats: {} cells with EOL, {} datasets, Pearson(EOL, knee) = {} -> {}",
        global.eol.len(),
        tags.len(),
        r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}")),
        out.display()
    ))
}
