use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PredictError;
use crate::features::{CapacityTrajectory, CycleFeatures};
use crate::inr::InrConfig;
use crate::knee::{self, KneeConfig};
use crate::rng::stream;

/// One cell: its SOH trajectory and its per-cycle feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub trajectory: CapacityTrajectory,
    pub rows: Vec<CycleFeatures>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Soh,
    Rul,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Soh => "soh",
            TargetKind::Rul => "rul",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = PredictError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soh" => Ok(TargetKind::Soh),
            "rul" => Ok(TargetKind::Rul),
            _ => Err(PredictError::Config(format!("unknown target `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageClass {
    /// Only information from the first N cycles.
    EarlyLife,
    /// Adds descriptors of the whole trajectory (knee cycle, curvature).
    FullTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub target: TargetKind,
    /// Early window N.
    pub window: usize,
    pub leakage_class: LeakageClass,
    /// Fit the prefix surrogate and extrapolate its knee (one small fit per cell).
    pub early_knee: bool,
    pub knee: KneeConfig,
    /// Surrogate used by the early-knee estimate.
    pub early_knee_inr: InrConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let knee = KneeConfig::default();
        Self {
            target: TargetKind::Rul,
            window: 10,
            leakage_class: LeakageClass::EarlyLife,
            early_knee: true,
            early_knee_inr: knee.inr.clone(),
            knee,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub cell_id: String,
    pub dataset_tag: String,
    /// Cycle at which the prediction is made.
    pub cycle: usize,
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedDataset {
    pub rows: Vec<DatasetRow>,
    pub feature_names: Vec<String>,
    pub target_kind: TargetKind,
    pub early_window: usize,
    pub leakage_class: LeakageClass,
    /// Cells left out, with the reason.
    pub dropped: Vec<(String, String)>,
}

impl SupervisedDataset {
    pub fn x(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Distinct cell ids in first-appearance order.
    pub fn cell_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.cell_id.as_str()))
            .map(|r| r.cell_id.clone())
            .collect()
    }

    /// Rows at `indices`, in that order, with the same metadata.
    pub fn subset(&self, indices: &[usize]) -> SupervisedDataset {
        SupervisedDataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            target_kind: self.target_kind,
            early_window: self.early_window,
            leakage_class: self.leakage_class,
            dropped: Vec::new(),
        }
    }

    /// Concatenation of datasets with identical feature layouts.
    pub fn concat(parts: &[SupervisedDataset]) -> Result<SupervisedDataset, PredictError> {
        let first = parts.first().ok_or(PredictError::EmptyDataset)?;
        let mut out = first.clone();
        for p in &parts[1..] {
            if p.feature_names != first.feature_names || p.target_kind != first.target_kind {
                return Err(PredictError::Config("datasets have different layouts".into()));
            }
            out.rows.extend(p.rows.iter().cloned());
            out.dropped.extend(p.dropped.iter().cloned());
        }
        Ok(out)
    }
}

pub fn early_feature_names(n: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=n).map(|i| format!("soh_{i}")).collect();
    names.extend(
        [
            "slope_prefix",
            "slope_last_half",
            "q0",
            "early_knee",
            "mean_abs_current_a",
            "mean_temp_c",
        ]
        .map(String::from),
    );
    names
}

const FULL_FEATURES: [&str; 3] = ["knee_cycle", "max_abs_curvature", "mean_curvature"];

fn slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(k, s) in points {
        let dx = k as f64 - mx;
        sxy += dx * (s - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Features of the first `n` cycles of a cell. Anything past cycle `n` is
/// sliced off before use, so the result depends on the prefix only.
pub fn early_features(cell: &CellData, n: usize, cfg: &DatasetConfig) -> Result<Vec<f64>, PredictError> {
    let traj = &cell.trajectory;
    if traj.len() < n {
        return Err(PredictError::ShortCell {
            cell_id: traj.cell_id.clone(),
            got: traj.len(),
            need: n,
        });
    }
    let prefix = traj.prefix(n);
    let last_cycle = prefix.points[n - 1].0;
    let early_rows: Vec<&CycleFeatures> = cell.rows.iter().filter(|r| r.cycle_index <= last_cycle).collect();

    let mut f: Vec<f64> = prefix.points.iter().map(|p| p.1).collect();
    f.push(slope(&prefix.points));
    f.push(slope(&prefix.points[n / 2..]));
    f.push(prefix.q0);
    let fallback = (prefix.points[0].0 + 3 * n) as f64;
    let early_knee = if cfg.early_knee && n >= 4 {
        knee::early_life_knee(&prefix, &cfg.knee, &cfg.early_knee_inr)?
            .knee_cycle
            .map_or(fallback, |k| k as f64)
    } else {
        fallback
    };
    f.push(early_knee);
    f.push(mean(early_rows.iter().map(|r| r.mean_current_a.abs())));
    f.push(mean(early_rows.iter().filter_map(|r| r.mean_temp_c)));
    Ok(f)
}

/// Descriptors of the whole trajectory: knee cycle (annotation, else detected,
/// else the last observed cycle) and summary statistics of the curvature.
pub fn full_features(cell: &CellData, cfg: &DatasetConfig) -> Result<Vec<f64>, PredictError> {
    let traj = &cell.trajectory;
    let report = knee::detect_knee(traj, &cfg.knee)?;
    let last = traj.points.last().map_or(0, |p| p.0);
    let knee_cycle = traj.knee_cycle.or(report.knee_cycle).unwrap_or(last);
    let kappa = &report.curvature_series;
    Ok(vec![
        knee_cycle as f64,
        kappa.iter().map(|p| p.1.abs()).fold(0.0, f64::max),
        mean(kappa.iter().map(|p| p.1)),
    ])
}

enum CellOutcome {
    Rows(Vec<DatasetRow>),
    Dropped(String, String),
}

fn cell_rows(cell: &CellData, cfg: &DatasetConfig) -> Result<CellOutcome, PredictError> {
    let traj = &cell.trajectory;
    let n = cfg.window;
    let drop = |why: String| Ok(CellOutcome::Dropped(traj.cell_id.clone(), why));
    if cfg.target == TargetKind::Rul && traj.eol_cycle.is_none() {
        return Err(PredictError::MissingEol(traj.cell_id.clone()));
    }
    if traj.len() < n {
        return drop(format!("{} cycles, window needs {n}", traj.len()));
    }
    let mut features = early_features(cell, n, cfg)?;
    if cfg.leakage_class == LeakageClass::FullTrajectory {
        features.extend(full_features(cell, cfg)?);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return drop("non-finite feature".into());
    }
    let k = traj.points[n - 1].0;
    let base = |cycle: usize, features: Vec<f64>, target: f64| DatasetRow {
        cell_id: traj.cell_id.clone(),
        dataset_tag: traj.dataset_tag.clone(),
        cycle,
        features,
        target,
    };
    match cfg.target {
        TargetKind::Rul => {
            let eol = traj.eol_cycle.unwrap();
            if eol < k {
                return drop(format!("EOL {eol} precedes prediction cycle {k}"));
            }
            Ok(CellOutcome::Rows(vec![base(k, features, (eol - k) as f64)]))
        }
        TargetKind::Soh => Ok(CellOutcome::Rows(
            traj.points[n..]
                .iter()
                .map(|&(c, soh)| {
                    let mut x = features.clone();
                    x.push(c as f64);
                    base(c, x, soh)
                })
                .collect(),
        )),
    }
}

/// Builds the design matrix. RUL rows (one per cell) are taken at the last
/// cycle of the window; SOH rows cover every later cycle with the cycle index
/// as an extra input. Cells too short for the window, already past EOL, or
/// with non-finite features are dropped and listed.
pub fn make_dataset(cells: &[CellData], cfg: &DatasetConfig) -> Result<SupervisedDataset, PredictError> {
    if cfg.window < 2 {
        return Err(PredictError::Config("window must be >= 2".into()));
    }
    let outcomes: Vec<CellOutcome> = cells.par_iter().map(|c| cell_rows(c, cfg)).collect::<Result<_, _>>()?;
    let mut feature_names = early_feature_names(cfg.window);
    if cfg.leakage_class == LeakageClass::FullTrajectory {
        feature_names.extend(FULL_FEATURES.map(String::from));
    }
    if cfg.target == TargetKind::Soh {
        feature_names.push("cycle".into());
    }
    let mut ds = SupervisedDataset {
        rows: Vec::new(),
        feature_names,
        target_kind: cfg.target,
        early_window: cfg.window,
        leakage_class: cfg.leakage_class,
        dropped: Vec::new(),
    };
    for o in outcomes {
        match o {
            CellOutcome::Rows(r) => ds.rows.extend(r),
            CellOutcome::Dropped(id, why) => {
                log::info!("dataset: dropping cell {id}: {why}");
                ds.dropped.push((id, why));
            }
        }
    }
    Ok(ds)
}

/// Fold index of every row. Distinct cells are shuffled with the seed and
/// dealt round-robin, so each cell lands in exactly one fold and fold sizes
/// (in cells) differ by at most one. Row order within a cell is untouched.
pub fn cell_level_split(ds: &SupervisedDataset, n_folds: usize, seed: u64) -> Result<Vec<usize>, PredictError> {
    if n_folds < 2 {
        return Err(PredictError::Config("need at least 2 folds".into()));
    }
    let mut cells = ds.cell_ids();
    if cells.len() < n_folds {
        return Err(PredictError::TooFewCells {
            cells: cells.len(),
            folds: n_folds,
        });
    }
    cells.shuffle(&mut stream(seed, 0));
    let fold_of: std::collections::HashMap<&str, usize> = cells.iter().enumerate().map(|(i, c)| (c.as_str(), i % n_folds)).collect();
    Ok(ds.rows.iter().map(|r| fold_of[r.cell_id.as_str()]).collect())
}

/// `(train, test)` row indices of each fold.
pub fn fold_indices(folds: &[usize], n_folds: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..n_folds).map(|f| (0..folds.len()).partition(|&i| folds[i] != f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_trajectory, TrajectorySpec};

    fn cell(id: &str, length: usize, seed: u64) -> CellData {
        let spec = TrajectorySpec {
            length,
            noise_sd: 0.002,
            seed,
            ..TrajectorySpec::default()
        };
        let g = gen_trajectory(&spec, id, "t").unwrap();
        CellData {
            trajectory: g.trajectory,
            rows: g.rows,
        }
    }

    fn quick() -> DatasetConfig {
        DatasetConfig {
            early_knee: false,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn window_excludes_later_cycles() {
        let c = cell("a", 40, 1);
        let f = early_features(&c, 5, &quick()).unwrap();
        assert_eq!(f.len(), early_feature_names(5).len());
        assert_eq!(&f[..5], &c.trajectory.soh()[..5]);
        let mut tampered = c.clone();
        for p in tampered.trajectory.points.iter_mut().skip(5) {
            p.1 = -7.0;
        }
        for r in tampered.rows.iter_mut().skip(5) {
            r.mean_current_a = 99.0;
            r.mean_temp_c = Some(99.0);
        }
        assert_eq!(early_features(&tampered, 5, &quick()).unwrap(), f);
    }

    #[test]
    fn full_mode_is_labelled() {
        let cells = vec![cell("a", 40, 1), cell("b", 40, 2)];
        let cfg = DatasetConfig {
            leakage_class: LeakageClass::FullTrajectory,
            ..quick()
        };
        let ds = make_dataset(&cells, &cfg).unwrap();
        assert_eq!(ds.leakage_class, LeakageClass::FullTrajectory);
        assert!(ds.feature_names.iter().any(|n| n == "knee_cycle"));
        assert_eq!(ds.rows[0].features.len(), ds.n_features());
    }

    #[test]
    fn rul_target_is_eol_minus_prediction_cycle() {
        let c = cell("a", 40, 3);
        let eol = c.trajectory.eol_cycle.unwrap();
        let ds = make_dataset(&[c], &quick()).unwrap();
        let row = &ds.rows[0];
        assert_eq!(row.cycle, 9);
        assert_eq!(row.target, (eol - 9) as f64);
    }

    #[test]
    fn rul_without_eol_is_an_error() {
        let mut c = cell("a", 40, 3);
        c.trajectory.eol_cycle = None;
        assert!(matches!(make_dataset(&[c], &quick()), Err(PredictError::MissingEol(_))));
    }

    #[test]
    fn soh_rows_follow_the_window() {
        let c = cell("a", 30, 4);
        let cfg = DatasetConfig {
            target: TargetKind::Soh,
            ..quick()
        };
        let ds = make_dataset(std::slice::from_ref(&c), &cfg).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.rows[0].cycle, 10);
        assert_eq!(ds.rows[0].target, c.trajectory.points[10].1);
    }

    #[test]
    fn short_cells_are_dropped() {
        let ds = make_dataset(&[cell("a", 40, 1), cell("b", 6, 2)], &quick());
        // the 6-cycle cell has no EOL either; RUL requires one
        assert!(ds.is_err());
        let cfg = DatasetConfig {
            target: TargetKind::Soh,
            ..quick()
        };
        let ds = make_dataset(&[cell("a", 40, 1), cell("b", 6, 2)], &cfg).unwrap();
        assert_eq!(ds.dropped.len(), 1);
        assert_eq!(ds.cell_ids(), vec!["a".to_string()]);
    }

    #[test]
    fn ten_cells_five_folds() {
        let cells: Vec<CellData> = (0..10).map(|i| cell(&format!("c{i}"), 40, i)).collect();
        let ds = make_dataset(&cells, &quick()).unwrap();
        let folds = cell_level_split(&ds, 5, 7).unwrap();
        for f in 0..5 {
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 2);
        }
        assert_eq!(folds, cell_level_split(&ds, 5, 7).unwrap());
        assert!(matches!(cell_level_split(&ds, 11, 7), Err(PredictError::TooFewCells { .. })));
    }
}
