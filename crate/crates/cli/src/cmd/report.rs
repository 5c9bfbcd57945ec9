use std::path::Path;

use kneesight::io::atomic_write;

use crate::artifacts as a;
use crate::error::{CliError, Result};
use crate::table::{num, parse_f64, Table};
use crate::Ctx;

/// Tables carried into the report unchanged, with their producer.
const TABLES: [(&str, &str); 10] = [
    (a::EARLY_LIFE_RUL, "predict"),
    (a::FEATURE_ABLATION, "predict"),
    (a::HORIZON_BASELINE, "predict"),
    (a::KNEE_SUMMARY, "stats"),
    (a::KNEE_BY_DATASET, "stats"),
    (a::CORRELATION_CI, "stats"),
    (a::CROSS_DATASET, "xeval"),
    (a::LIFETIME_FIT_GLOBAL, "reliability"),
    (a::LIFETIME_FIT_BY_DATASET, "reliability"),
    (a::CLUSTERS, "cluster"),
];

fn read_if(path: &Path) -> Result<Option<Table>> {
    if path.is_file() {
        Table::read(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Equal-width histogram as `(bin centre, count)` rows.
fn histogram(values: &[f64], bins: usize) -> Table {
    let mut t = Table::new(&["x", "y"]);
    if values.is_empty() {
        return t;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { bins.max(1) } else { 1 };
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        t.push(vec![num(lo + (i as f64 + 0.5) * width), c.to_string()]);
    }
    t
}

fn column_values(path: &Path, t: &Table, name: &str) -> Result<Vec<f64>> {
    let i = t.require(path, &[name])?[0];
    t.rows
        .iter()
        .filter(|r| !r[i].trim().is_empty())
        .map(|r| parse_f64(path, &r[i], name))
        .collect()
}

pub fn run(ctx: &Ctx) -> Result<String> {
    let dir = ctx.artifact(a::REPORT_DIR);
    std::fs::create_dir_all(&dir)?;
    let bins = ctx.config.report.hist_bins;
    let mut tables = 0;
    let mut missing = Vec::new();
    for (name, producer) in TABLES {
        let src = ctx.artifact(name);
        if src.is_file() {
            atomic_write(&dir.join(name), &std::fs::read(&src)?)?;
            tables += 1;
        } else {
            missing.push(format!("{name} ({producer})"));
        }
    }

    let mut plots = 0;
    let mut write_plot = |name: &str, t: Table| -> Result<()> {
        t.write(&dir.join(name))?;
        plots += 1;
        Ok(())
    };

    let km_path = ctx.artifact(a::KAPLAN_MEIER);
    let sc_path = ctx.artifact(a::SURVIVAL_CURVES);
    let km = read_if(&km_path)?;
    let sc = read_if(&sc_path)?;
    if km.is_some() || sc.is_some() {
        let mut surv = Table::new(&["series", "x", "y"]);
        let mut haz = Table::new(&["series", "x", "y"]);
        if let Some(t) = &km {
            let i = t.require(&km_path, &["dataset", "time", "survival"])?;
            for r in &t.rows {
                surv.push(vec![format!("kaplan_meier:{}", r[i[0]]), r[i[1]].clone(), r[i[2]].clone()]);
            }
        }
        if let Some(t) = &sc {
            let i = t.require(&sc_path, &["dataset", "family", "time", "survival", "hazard"])?;
            for r in &t.rows {
                let series = format!("{}:{}", r[i[1]], r[i[0]]);
                surv.push(vec![series.clone(), r[i[2]].clone(), r[i[3]].clone()]);
                haz.push(vec![series, r[i[2]].clone(), r[i[4]].clone()]);
            }
            write_plot("plot_hazard.csv", haz)?;
        }
        write_plot("plot_survival.csv", surv)?;
    }

    let cells_path = ctx.artifact(a::CELLS);
    if let Some(t) = read_if(&cells_path)? {
        write_plot(
            "plot_eol_histogram.csv",
            histogram(&column_values(&cells_path, &t, "eol_cycle")?, bins),
        )?;
    }
    let knees_path = ctx.artifact(a::KNEES);
    if let Some(t) = read_if(&knees_path)? {
        write_plot(
            "plot_knee_histogram.csv",
            histogram(&column_values(&knees_path, &t, "knee_cycle")?, bins),
        )?;
    }

    let xe_path = ctx.artifact(a::CROSS_DATASET);
    if let Some(t) = read_if(&xe_path)? {
        let mut heat = Table::new(&["x", "y", "value"]);
        for r in &t.rows {
            for (j, v) in r.iter().enumerate().skip(1) {
                heat.push(vec![t.header[j].clone(), r[0].clone(), v.clone()]);
            }
        }
        write_plot("plot_cross_dataset_heatmap.csv", heat)?;
    }

    let det_path = ctx.artifact(a::EARLY_LIFE_DETAIL);
    if let Some(t) = read_if(&det_path)? {
        let i = t.require(&det_path, &["model", "input_cycles", "rmse_mean", "rmse_std"])?;
        let mut p = Table::new(&["series", "x", "y", "band"]);
        for r in &t.rows {
            p.push(vec![r[i[0]].clone(), r[i[1]].clone(), r[i[2]].clone(), r[i[3]].clone()]);
        }
        write_plot("plot_early_life_rmse.csv", p)?;
    }

    let cc_path = ctx.artifact(a::CONFIDENCE_CURVE);
    if let Some(t) = read_if(&cc_path)? {
        let i = t.require(&cc_path, &["model", "input_cycles", "retained_fraction", "rmse"])?;
        let mut p = Table::new(&["series", "x", "y"]);
        for r in &t.rows {
            p.push(vec![format!("{}:N{}", r[i[0]], r[i[1]]), r[i[2]].clone(), r[i[3]].clone()]);
        }
        write_plot("plot_confidence_curve.csv", p)?;
    }

    let pred_path = ctx.artifact(a::PREDICTIONS);
    if let Some(t) = read_if(&pred_path)? {
        let i = t.require(&pred_path, &["model", "input_cycles", "target", "prediction", "sigma"])?;
        let mut p = Table::new(&["series", "x", "y", "band"]);
        for r in &t.rows {
            p.push(vec![
                format!("{}:N{}", r[i[0]], r[i[1]]),
                r[i[2]].clone(),
                r[i[3]].clone(),
                r[i[4]].clone(),
            ]);
        }
        write_plot("plot_rul_parity.csv", p)?;
    }

    if tables == 0 && plots == 0 {
        return Err(CliError::validation(format!(
            "report: no upstream artifacts in {} (run the pipeline first)",
            ctx.out.display()
        )));
    }
    if !missing.is_empty() {
        log::info!("report: not available: {}", missing.join(", "));
    }
    Ok(format!("report: {tables} tables, {plots} plot series files -> {}", dir.display()))
}
