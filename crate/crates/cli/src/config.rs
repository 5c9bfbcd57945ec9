//! JSON run configuration. Every flag has a key here; flags win.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use kneesight::features::{DescriptorConfig, Q0Rule};
use kneesight::ingest::SegmentationConfig;
use kneesight::inr::{InrConfig, Variant};
use kneesight::knee::KneeConfig;
use kneesight::predict::{DatasetConfig, ModelSpec};
use kneesight::reliability::Family;
use kneesight::synth::PopulationSpec;

use crate::error::{CliError, Result};

pub const DEFAULT_OUT: &str = "kneesight-out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every stochastic step of every subcommand.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub ingest: IngestSection,
    pub features: InputSection,
    pub fit_inr: FitInrSection,
    pub knee: KneeSection,
    pub reliability: ReliabilitySection,
    pub stats: StatsSection,
    pub predict: PredictSection,
    pub xeval: XevalSection,
    pub cluster: ClusterSection,
    pub synth: SynthSection,
    pub report: ReportSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct InputSection {
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    /// Raw time-series CSV.
    pub input: Option<PathBuf>,
    /// Column mapping JSON.
    pub mapping: Option<PathBuf>,
    /// Overrides the segmentation derived from the mapping.
    pub segmentation: Option<SegmentationConfig>,
    pub descriptors: DescriptorConfig,
    pub q0: Q0Rule,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FitInrSection {
    pub input: Option<PathBuf>,
    pub variant: Variant,
    /// Full model config; defaults to the capacity preset of `variant`.
    pub model: Option<InrConfig>,
    pub val_fraction: f64,
    pub max_cells: Option<usize>,
}

impl Default for FitInrSection {
    fn default() -> Self {
        Self {
            input: None,
            variant: Variant::Siren,
            model: None,
            val_fraction: 0.2,
            max_cells: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct KneeSection {
    pub input: Option<PathBuf>,
    pub detector: KneeConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ReliabilitySection {
    /// Lifetime table or cycle table.
    pub input: Option<PathBuf>,
    /// Family of the emitted survival and hazard curves.
    pub family: Family,
    pub curve_points: usize,
}

impl Default for ReliabilitySection {
    fn default() -> Self {
        Self {
            input: None,
            family: Family::Weibull,
            curve_points: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct StatsSection {
    pub input: Option<PathBuf>,
    pub knees: Option<PathBuf>,
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            input: None,
            knees: None,
            bootstrap: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct PredictSection {
    pub input: Option<PathBuf>,
    /// Knee table used to annotate trajectories for the full-trajectory features.
    pub knees: Option<PathBuf>,
    pub windows: Vec<usize>,
    pub folds: usize,
    /// Defaults to linear, forest and INR regressors.
    pub models: Option<Vec<ModelSpec>>,
    pub dataset: DatasetConfig,
    /// Early window of the feature-set ablation and the importance ranking.
    pub ablation_window: usize,
    /// Horizons of the per-cell linear capacity-versus-cycle baseline.
    pub horizons: Vec<usize>,
    pub importance: bool,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            input: None,
            knees: None,
            windows: vec![5, 10, 20],
            folds: 5,
            models: None,
            dataset: DatasetConfig::default(),
            ablation_window: 10,
            horizons: vec![5, 10, 20],
            importance: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct XevalSection {
    pub input: Option<PathBuf>,
    pub window: usize,
    pub folds: usize,
    /// Defaults to the forest.
    pub model: Option<ModelSpec>,
    pub dataset: DatasetConfig,
}

impl Default for XevalSection {
    fn default() -> Self {
        Self {
            input: None,
            window: 10,
            folds: 5,
            model: None,
            dataset: DatasetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ClusterSection {
    pub input: Option<PathBuf>,
    pub k: usize,
    pub components: usize,
    /// Leading cycles of SOH forming each cell's vector; shorter cells are skipped.
    pub grid: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            input: None,
            k: 3,
            components: 2,
            grid: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct WeibullSection {
    pub shape: f64,
    pub scale: f64,
    pub n: usize,
    pub dataset_tag: String,
}

impl Default for WeibullSection {
    fn default() -> Self {
        Self {
            shape: 2.353,
            scale: 16.509,
            n: 222,
            dataset_tag: "weibull".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    /// Population `i` is drawn with seed `derive_seed(seed, i)`; seeds inside
    /// the specs are ignored.
    pub populations: Vec<PopulationSpec>,
    /// Emit only a Weibull lifetime table.
    pub weibull_only: bool,
    pub weibull: WeibullSection,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            populations: vec![PopulationSpec::default()],
            weibull_only: false,
            weibull: WeibullSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    pub hist_bins: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { hist_bins: 20 }
    }
}
