//! The `kneesight` command line: each subcommand reads CSV/JSON artifacts,
//! writes its outputs atomically into the output directory and prints a
//! one-line summary.
//!
//! Exit codes: 0 success, 1 validation error (bad flag, config, schema or
//! missing upstream artifact), 2 numerical failure.

mod cmd;
pub mod config;
pub mod error;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use kneesight::inr::Variant;
use kneesight::reliability::Family;

pub use config::RunConfig;
pub use error::{CliError, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};

/// File names of the artifacts exchanged between subcommands.
pub mod artifacts {
    pub const CYCLES: &str = "cycles.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const LIFETIMES: &str = "lifetimes.csv";
    pub const TRAJECTORIES: &str = "trajectories.csv";
    pub const CELLS: &str = "cells.csv";
    pub const KNEES: &str = "knees.csv";
    pub const CURVATURE: &str = "curvature.csv";
    pub const LIFETIME_FIT_GLOBAL: &str = "lifetime_fit_global.csv";
    pub const LIFETIME_FIT_BY_DATASET: &str = "lifetime_fit_by_dataset.csv";
    pub const KAPLAN_MEIER: &str = "kaplan_meier.csv";
    pub const SURVIVAL_CURVES: &str = "survival_curves.csv";
    pub const KNEE_SUMMARY: &str = "knee_summary.csv";
    pub const KNEE_BY_DATASET: &str = "knee_by_dataset.csv";
    pub const CORRELATION_CI: &str = "correlation_ci.csv";
    pub const GROUP_TESTS: &str = "group_tests.csv";
    pub const EFFECT_SIZES: &str = "effect_sizes.csv";
    pub const EARLY_LIFE_RUL: &str = "early_life_rul.csv";
    pub const EARLY_LIFE_DETAIL: &str = "early_life_rul_detail.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const FEATURE_ABLATION: &str = "feature_ablation.csv";
    pub const HORIZON_BASELINE: &str = "horizon_baseline.csv";
    pub const CALIBRATION: &str = "calibration.csv";
    pub const CONFIDENCE_CURVE: &str = "confidence_curve.csv";
    pub const IMPORTANCE: &str = "importance.csv";
    pub const CROSS_DATASET: &str = "cross_dataset_rmse.csv";
    pub const CLUSTERS: &str = "clusters.csv";
    pub const PCA: &str = "pca.csv";
    pub const KMEANS_INERTIA: &str = "kmeans_inertia.csv";
    pub const REPORT_DIR: &str = "report";
}

#[derive(Debug, Parser)]
#[command(name = "kneesight", version, about = "Battery degradation analysis pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (created if absent); upstream artifacts are read from it.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for per-cell stages; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct InputArg {
    /// Input table; defaults to the upstream artifact in the output directory.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
}

fn parse_n_early(s: &str) -> Result<usize, String> {
    match s {
        "5" | "10" | "20" => Ok(s.parse().unwrap()),
        _ => Err("expected one of 5, 10, 20".into()),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Raw time series plus column mapping to the per-cycle table.
    Ingest {
        #[command(flatten)]
        input: InputArg,
        /// Column mapping JSON.
        #[arg(long, value_name = "PATH")]
        mapping: Option<PathBuf>,
    },
    /// Per-cell SOH trajectories and summaries from the per-cycle table.
    Features {
        #[command(flatten)]
        input: InputArg,
    },
    /// Fits a continuous capacity surrogate to every cell.
    FitInr {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Curvature knee per cell.
    Knee {
        #[command(flatten)]
        input: InputArg,
    },
    /// Kaplan-Meier and parametric lifetime fits of the EOL population.
    Reliability {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_parser = parse_family)]
        family: Option<Family>,
    },
    /// EOL, knee and initial-capacity statistics with bootstrap intervals.
    Stats {
        #[command(flatten)]
        input: InputArg,
    },
    /// Early-life RUL regression with cell-level cross-validation.
    Predict {
        #[command(flatten)]
        input: InputArg,
        /// Restrict to one early window.
        #[arg(long, value_parser = parse_n_early)]
        n_early: Option<usize>,
    },
    /// Train-on-one, test-on-another RMSE matrix across dataset tags.
    Xeval {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_parser = parse_n_early)]
        n_early: Option<usize>,
    },
    /// PCA and k-means over early SOH trajectories.
    Cluster {
        #[command(flatten)]
        input: InputArg,
    },
    /// Synthetic populations in the per-cycle schema.
    Synth {
        /// Emit a Weibull lifetime table instead of trajectories.
        #[arg(long)]
        weibull: bool,
    },
    /// Collects prior outputs into summary tables and plot-ready series.
    Report,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| "expected one of mlp_posenc, siren, fourier, rbf".to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|_| "expected weibull or lognormal".to_string())
}

/// Resolved settings shared by every subcommand.
pub(crate) struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub config: RunConfig,
}

impl Ctx {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// First of flag, config value and default artifact; must exist.
    pub fn input(&self, flag: &Option<PathBuf>, configured: &Option<PathBuf>, default: &str, producer: &str) -> error::Result<PathBuf> {
        let path = flag
            .clone()
            .or_else(|| configured.clone())
            .unwrap_or_else(|| self.artifact(default));
        if !path.is_file() {
            return Err(CliError::missing_artifact(&path, producer));
        }
        Ok(path)
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("KNEESIGHT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_VALIDATION
                }
            };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> error::Result<String> {
    let config = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.global.seed.or(config.seed).unwrap_or(0);
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT));
    let jobs = cli.global.jobs.or(config.jobs);
    std::fs::create_dir_all(&out).map_err(|e| CliError::validation(format!("{}: {e}", out.display())))?;
    let ctx = Ctx { seed, out, config };
    let pool = match jobs {
        Some(0) => return Err(CliError::validation("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::validation(e.to_string()))?;
    pool.install(|| dispatch(&ctx, cli.command))
}

fn dispatch(ctx: &Ctx, command: Command) -> error::Result<String> {
    match command {
        Command::Ingest { input, mapping } => cmd::ingest::run(ctx, input.input, mapping),
        Command::Features { input } => cmd::features::run(ctx, input.input),
        Command::FitInr { input, variant } => cmd::fit_inr::run(ctx, input.input, variant),
        Command::Knee { input } => cmd::knee::run(ctx, input.input),
        Command::Reliability { input, family } => cmd::reliability::run(ctx, input.input, family),
        Command::Stats { input } => cmd::stats::run(ctx, input.input),
        Command::Predict { input, n_early } => cmd::predict::run(ctx, input.input, n_early),
        Command::Xeval { input, n_early } => cmd::xeval::run(ctx, input.input, n_early),
        Command::Cluster { input } => cmd::cluster::run(ctx, input.input),
        Command::Synth { weibull } => cmd::synth::run(ctx, weibull),
        Command::Report => cmd::report::run(ctx),
    }
}
