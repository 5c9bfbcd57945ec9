use std::path::{Path, PathBuf};

use kneesight::reliability::{density, hazard, kaplan_meier, survival, Family, Lifetime, LifetimeSample, PopulationFit, FIT_TABLE_COLUMNS};

use super::load_cells;
use crate::artifacts;
use crate::error::{CliError, Result};
use crate::table::{num, parse_f64, Table};
use crate::Ctx;

/// Lifetimes grouped by dataset tag, in first-appearance order.
type Groups = Vec<(String, Vec<Lifetime>)>;

fn push(groups: &mut Groups, tag: &str, l: Lifetime) {
    match groups.iter_mut().find(|g| g.0 == tag) {
        Some(g) => g.1.push(l),
        None => groups.push((tag.to_string(), vec![l])),
    }
}

fn read_lifetime_table(path: &Path, t: &Table) -> Result<Groups> {
    let value = t.require(path, &["lifetime"])?[0];
    let tag = t.column("dataset_tag");
    let censored = t.column("censored");
    let mut groups = Groups::new();
    for r in &t.rows {
        let c = match censored.map(|i| r[i].trim()) {
            None | Some("") | Some("false") | Some("0") => false,
            Some("true") | Some("1") => true,
            Some(other) => return Err(CliError::schema(path, format!("censored flag `{other}`"))),
        };
        let l = Lifetime {
            value: parse_f64(path, &r[value], "lifetime")?,
            censored: c,
        };
        push(&mut groups, tag.map_or("all", |i| r[i].as_str()), l);
    }
    Ok(groups)
}

/// EOL cycle per cell; cells that never reach EOL are right-censored at
/// their last observed cycle.
fn lifetimes_from_cycles(path: &Path) -> Result<Groups> {
    let mut groups = Groups::new();
    for c in load_cells(path)? {
        let t = &c.trajectory;
        let l = match t.eol_cycle {
            Some(e) => Lifetime {
                value: e as f64,
                censored: false,
            },
            None => Lifetime {
                value: t.points.last().unwrap().0 as f64,
                censored: true,
            },
        };
        if l.value > 0.0 {
            push(&mut groups, &t.dataset_tag, l);
        } else {
            log::info!("{}: lifetime 0 skipped", t.cell_id);
        }
    }
    Ok(groups)
}

fn uncensored(ls: &[Lifetime]) -> Vec<f64> {
    ls.iter().filter(|l| !l.censored).map(|l| l.value).collect()
}

pub fn run(ctx: &Ctx, input: Option<PathBuf>, family: Option<Family>) -> Result<String> {
    let section = &ctx.config.reliability;
    let family = family.unwrap_or(section.family);
    let default = if input.is_none() && section.input.is_none() && !ctx.artifact(artifacts::LIFETIMES).is_file() {
        artifacts::CYCLES
    } else {
        artifacts::LIFETIMES
    };
    let path = ctx.input(&input, &section.input, default, "synth")?;
    let t = Table::read(&path)?;
    let groups = if t.column("lifetime").is_some() {
        read_lifetime_table(&path, &t)?
    } else if t.column("cycle_index").is_some() {
        lifetimes_from_cycles(&path)?
    } else {
        return Err(CliError::schema(&path, "expected a lifetime table or a per-cycle table"));
    };
    let all: Vec<Lifetime> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let global = PopulationFit::from_sample("all", &LifetimeSample::uncensored(&uncensored(&all))?)?;

    let mut global_t = Table::new(&FIT_TABLE_COLUMNS[1..]);
    global_t.push(global.record()[1..].to_vec());
    let mut by_dataset = Table::new(&FIT_TABLE_COLUMNS);
    let mut km = Table::new(&["dataset", "time", "survival"]);
    let mut curves = Table::new(&["dataset", "family", "time", "survival", "hazard", "density"]);
    let scopes: Vec<(&str, &[Lifetime])> = std::iter::once(("all", all.as_slice()))
        .chain(groups.iter().map(|g| (g.0.as_str(), g.1.as_slice())))
        .collect();
    for (i, (tag, ls)) in scopes.iter().enumerate() {
        let fit = if i == 0 {
            Some(global.clone())
        } else {
            match LifetimeSample::uncensored(&uncensored(ls)).and_then(|s| PopulationFit::from_sample(tag, &s)) {
                Ok(f) => {
                    by_dataset.push(f.record());
                    Some(f)
                }
                Err(e) => {
                    log::warn!("dataset {tag}: no lifetime fit ({e})");
                    None
                }
            }
        };
        let curve = kaplan_meier(&LifetimeSample::new(ls.to_vec())?);
        km.push(vec![tag.to_string(), "0".into(), "1".into()]);
        for &(t, s) in &curve.steps {
            km.push(vec![tag.to_string(), num(t), num(s)]);
        }
        if let Some(f) = fit {
            let lf = match family {
                Family::Weibull => f.weibull,
                Family::Lognormal => f.lognormal,
            };
            let t_max = 1.5 * ls.iter().map(|l| l.value).fold(0.0, f64::max);
            for j in 1..=section.curve_points.max(1) {
                let t = t_max * j as f64 / section.curve_points.max(1) as f64;
                curves.push(vec![
                    tag.to_string(),
                    family.name().into(),
                    num(t),
                    num(survival(&lf, t)?),
                    num(hazard(&lf, t)?),
                    num(density(&lf, t)?),
                ]);
            }
        }
    }
    let out = ctx.artifact(artifacts::LIFETIME_FIT_BY_DATASET);
    global_t.write(&ctx.artifact(artifacts::LIFETIME_FIT_GLOBAL))?;
    by_dataset.write(&out)?;
    km.write(&ctx.artifact(artifacts::KAPLAN_MEIER))?;
    curves.write(&ctx.artifact(artifacts::SURVIVAL_CURVES))?;
    let censored = all.iter().filter(|l| l.censored).count();
    let (shape, scale) = match family {
        Family::Weibull => (global.weibull.shape, global.weibull.scale),
        Family::Lognormal => (global.lognormal.shape, global.lognormal.scale),
    };
    Ok(format!(
        "reliability: {} lifetimes ({censored} censored), {} shape {shape:.4} scale {scale:.4} -> {}",
        all.len(),
        family.name(),
        out.display()
    ))
}
