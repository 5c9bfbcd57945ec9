use std::fmt;
use std::path::Path;

use kneesight::features::FeatureError;
use kneesight::ingest::IngestError;
use kneesight::inr::InrError;
use kneesight::knee::KneeError;
use kneesight::predict::PredictError;
use kneesight::reliability::ReliabilityError;
use kneesight::stats::StatsError;
use kneesight::synth::SynthError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Failure of a subcommand, split by exit code: bad inputs or configuration
/// versus a numerical routine that could not produce a result.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn missing_artifact(path: &Path, producer: &str) -> Self {
        CliError::Validation(format!("missing upstream artifact {} (run `{producer}` first)", path.display()))
    }

    pub fn schema(path: &Path, msg: impl fmt::Display) -> Self {
        CliError::Validation(format!("{}: schema mismatch: {msg}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<InrError> for CliError {
    fn from(e: InrError) -> Self {
        match e {
            InrError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<KneeError> for CliError {
    fn from(e: KneeError) -> Self {
        match e {
            KneeError::Inr(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ReliabilityError> for CliError {
    fn from(e: ReliabilityError) -> Self {
        match e {
            ReliabilityError::NonConvergence | ReliabilityError::Degenerate => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::ZeroVariance | StatsError::DegenerateResamples { .. } | StatsError::NonFinite => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Knee(inner) => inner.into(),
            PredictError::Inr(inner) => inner.into(),
            PredictError::Stats(inner) => inner.into(),
            PredictError::RankDeficient | PredictError::NonFinite | PredictError::ConstantTargets => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_errors_map_to_exit_2() {
        assert_eq!(CliError::from(ReliabilityError::NonConvergence).exit_code(), EXIT_NUMERICAL);
        assert_eq!(CliError::from(PredictError::RankDeficient).exit_code(), EXIT_NUMERICAL);
        assert_eq!(
            CliError::from(PredictError::Inr(InrError::NonFiniteLoss { epoch: 3 })).exit_code(),
            EXIT_NUMERICAL
        );
        assert_eq!(CliError::from(ReliabilityError::Empty).exit_code(), EXIT_VALIDATION);
        assert_eq!(CliError::from(PredictError::MissingEol("c".into())).exit_code(), EXIT_VALIDATION);
    }
}
