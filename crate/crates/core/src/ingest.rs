//! Raw time-series ingestion, cycle segmentation and the per-cycle table.
//!
//! Raw records are generic CSV described by a JSON [`ColumnMapping`]; the
//! harmonised per-cycle table has a fixed column order (see
//! [`CYCLE_TABLE_COLUMNS`]) shared by real and synthetic data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CycleFeatures;
use crate::io::atomic_write;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("unknown column `{0}` in cycle table")]
    UnknownColumn(String),
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: duplicate timestamp {t} for cell `{cell_id}`")]
    DuplicateTimestamp { row: usize, cell_id: String, t: f64 },
    #[error("row {row}: non-positive voltage {voltage}")]
    NonPositiveVoltage { row: usize, voltage: f64 },
    #[error("time series for `{0}` is empty")]
    EmptySeries(String),
    #[error("time series for `{cell_id}` is not strictly increasing at sample {index}")]
    NonMonotoneTime { cell_id: String, index: usize },
    #[error("invalid segmentation config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One instrument reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds.
    pub t: f64,
    /// Amperes, signed.
    pub current: f64,
    /// Volts.
    pub voltage: f64,
    /// Degrees Celsius.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTimeSeries {
    pub cell_id: String,
    pub dataset_tag: String,
    pub samples: Vec<Sample>,
}

impl RawTimeSeries {
    /// Builds a series, checking that time is strictly increasing and every
    /// voltage is positive.
    pub fn new(cell_id: impl Into<String>, dataset_tag: impl Into<String>, samples: Vec<Sample>) -> Result<Self, IngestError> {
        let series = Self {
            cell_id: cell_id.into(),
            dataset_tag: dataset_tag.into(),
            samples,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.samples.is_empty() {
            return Err(IngestError::EmptySeries(self.cell_id.clone()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.voltage > 0.0) {
                return Err(IngestError::NonPositiveVoltage {
                    row: i,
                    voltage: s.voltage,
                });
            }
            if i > 0 && !(s.t > self.samples[i - 1].t) {
                return Err(IngestError::NonMonotoneTime {
                    cell_id: self.cell_id.clone(),
                    index: i,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleKind {
    Charge,
    Discharge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub cell_id: String,
    pub cycle_index: usize,
    pub kind: CycleKind,
    /// Position of the first sample within the source series.
    pub start: usize,
    pub samples: Vec<Sample>,
    /// Voltage of the rest sample immediately preceding the segment, if any.
    pub entry_voltage: Option<f64>,
}

impl Cycle {
    /// Builds a standalone discharge cycle from samples (no preceding rest).
    pub fn discharge(cell_id: impl Into<String>, cycle_index: usize, samples: Vec<Sample>) -> Self {
        Self {
            cell_id: cell_id.into(),
            cycle_index,
            kind: CycleKind::Discharge,
            start: 0,
            samples,
            entry_voltage: None,
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    #[serde(alias = "negative")]
    DischargeNegative,
    #[serde(alias = "positive")]
    DischargePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Rest band half-width in amperes.
    pub current_threshold: f64,
    pub min_segment_samples: usize,
    pub sign_convention: SignConvention,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            current_threshold: 0.01,
            min_segment_samples: 10,
            sign_convention: SignConvention::DischargeNegative,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.current_threshold > 0.0) {
            return Err(IngestError::Config("current_threshold must be > 0".into()));
        }
        if self.min_segment_samples < 2 {
            return Err(IngestError::Config("min_segment_samples must be >= 2".into()));
        }
        Ok(())
    }
}

/// JSON column mapping for raw CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub cell_id_col: String,
    pub time_col: String,
    pub current_col: String,
    pub voltage_col: String,
    #[serde(default)]
    pub temperature_col: Option<String>,
    #[serde(default = "one")]
    pub current_scale: f64,
    #[serde(default = "one")]
    pub voltage_scale: f64,
    #[serde(default = "one")]
    pub time_scale: f64,
    #[serde(default)]
    pub discharge_sign: SignConvention,
    /// Optional column carrying the group label.
    #[serde(default)]
    pub dataset_tag_col: Option<String>,
    /// Group label used when no tag column is mapped.
    #[serde(default = "default_tag")]
    pub dataset_tag: String,
}

fn one() -> f64 {
    1.0
}

fn default_tag() -> String {
    "default".to_string()
}

impl ColumnMapping {
    pub fn new(cell_id: &str, time: &str, current: &str, voltage: &str) -> Self {
        Self {
            cell_id_col: cell_id.into(),
            time_col: time.into(),
            current_col: current.into(),
            voltage_col: voltage.into(),
            temperature_col: None,
            current_scale: 1.0,
            voltage_scale: 1.0,
            time_scale: 1.0,
            discharge_sign: SignConvention::DischargeNegative,
            dataset_tag_col: None,
            dataset_tag: default_tag(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn segmentation_config(&self) -> SegmentationConfig {
        SegmentationConfig {
            sign_convention: self.discharge_sign,
            ..SegmentationConfig::default()
        }
    }
}

pub fn load_timeseries(path: &Path, mapping: &ColumnMapping) -> Result<Vec<RawTimeSeries>, IngestError> {
    let file = std::fs::File::open(path)?;
    read_timeseries(file, mapping)
}

/// Reads raw CSV from any reader. One series per distinct cell id, ordered by
/// first appearance, samples sorted by time and scaled to SI units.
pub fn read_timeseries<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<RawTimeSeries>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let cell_col = col(&mapping.cell_id_col)?;
    let time_col = col(&mapping.time_col)?;
    let current_col = col(&mapping.current_col)?;
    let voltage_col = col(&mapping.voltage_col)?;
    let temp_col = mapping.temperature_col.as_deref().map(col).transpose()?;
    let tag_col = mapping.dataset_tag_col.as_deref().map(col).transpose()?;

    // (cell order, tag, rows as (data row, sample))
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<String, (String, Vec<(usize, Sample)>)> = BTreeMap::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |idx: usize, name: &str| -> Result<f64, IngestError> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| IngestError::Parse {
                row,
                column: name.to_string(),
                value: raw.to_string(),
            })
        };
        let cell_id = record.get(cell_col).unwrap_or("").trim().to_string();
        let t = field(time_col, &mapping.time_col)? * mapping.time_scale;
        let current = field(current_col, &mapping.current_col)? * mapping.current_scale;
        let voltage = field(voltage_col, &mapping.voltage_col)? * mapping.voltage_scale;
        let temperature = match (temp_col, mapping.temperature_col.as_deref()) {
            (Some(idx), Some(name)) => {
                let raw = record.get(idx).unwrap_or("").trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(field(idx, name)?)
                }
            }
            _ => None,
        };
        if !(voltage > 0.0) {
            return Err(IngestError::NonPositiveVoltage { row, voltage });
        }
        let tag = match tag_col {
            Some(idx) => record.get(idx).unwrap_or("").trim().to_string(),
            None => mapping.dataset_tag.clone(),
        };
        let entry = cells.entry(cell_id.clone()).or_insert_with(|| {
            order.push(cell_id.clone());
            (tag, Vec::new())
        });
        entry.1.push((
            row,
            Sample {
                t,
                current,
                voltage,
                temperature,
            },
        ));
    }

    let mut out = Vec::with_capacity(order.len());
    for cell_id in order {
        let (tag, mut rows) = cells.remove(&cell_id).expect("cell recorded");
        rows.sort_by(|a, b| a.1.t.total_cmp(&b.1.t).then(a.0.cmp(&b.0)));
        for pair in rows.windows(2) {
            if pair[1].1.t == pair[0].1.t {
                return Err(IngestError::DuplicateTimestamp {
                    row: pair[1].0,
                    cell_id,
                    t: pair[1].1.t,
                });
            }
        }
        let samples = rows.into_iter().map(|(_, s)| s).collect();
        out.push(RawTimeSeries::new(cell_id, tag, samples)?);
    }
    Ok(out)
}

/// Splits a record into charge and discharge cycles.
///
/// A cycle is a maximal run of same-sign current outside the rest band that
/// is at least `min_segment_samples` long. Discharge and charge cycles are
/// numbered independently in time order. Output is ordered by start sample.
pub fn segment_cycles(series: &RawTimeSeries, cfg: &SegmentationConfig) -> Result<Vec<Cycle>, IngestError> {
    cfg.validate()?;
    if series.samples.is_empty() {
        return Err(IngestError::EmptySeries(series.cell_id.clone()));
    }
    let sign = |i: f64| -> i8 {
        if i > cfg.current_threshold {
            1
        } else if i < -cfg.current_threshold {
            -1
        } else {
            0
        }
    };
    let discharge_sign = match cfg.sign_convention {
        SignConvention::DischargeNegative => -1,
        SignConvention::DischargePositive => 1,
    };

    let samples = &series.samples;
    let mut cycles = Vec::new();
    let (mut n_charge, mut n_discharge) = (0usize, 0usize);
    let mut i = 0;
    while i < samples.len() {
        let s = sign(samples[i].current);
        if s == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < samples.len() && sign(samples[i].current) == s {
            i += 1;
        }
        if i - start < cfg.min_segment_samples {
            continue;
        }
        let kind = if s == discharge_sign {
            CycleKind::Discharge
        } else {
            CycleKind::Charge
        };
        let counter = match kind {
            CycleKind::Discharge => &mut n_discharge,
            CycleKind::Charge => &mut n_charge,
        };
        let entry_voltage = (start > 0 && sign(samples[start - 1].current) == 0).then(|| samples[start - 1].voltage);
        cycles.push(Cycle {
            cell_id: series.cell_id.clone(),
            cycle_index: *counter,
            kind,
            start,
            samples: samples[start..i].to_vec(),
            entry_voltage,
        });
        *counter += 1;
    }
    Ok(cycles)
}

/// Column order of the harmonised per-cycle CSV.
pub const CYCLE_TABLE_COLUMNS: [&str; 12] = [
    "cell_id",
    "cycle_index",
    "q_ah",
    "soh",
    "e_wh",
    "dv_ir",
    "eod_slope",
    "plateau_ah",
    "mid_curvature",
    "mean_current_a",
    "mean_temp_c",
    "dataset_tag",
];

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // Display is shortest-round-trip for f64.
        format!("{v}")
    }
}

pub fn write_cycle_table_to<W: Write>(rows: &[CycleFeatures], writer: W) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CYCLE_TABLE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.cell_id.clone(),
            r.cycle_index.to_string(),
            fmt_f64(r.q_ah),
            fmt_f64(r.soh),
            fmt_f64(r.e_wh),
            fmt_f64(r.dv_ir),
            fmt_f64(r.eod_slope),
            fmt_f64(r.plateau_ah),
            fmt_f64(r.mid_curvature),
            fmt_f64(r.mean_current_a),
            r.mean_temp_c.map(fmt_f64).unwrap_or_default(),
            r.dataset_tag.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the table atomically (temporary file then rename).
pub fn write_cycle_table(rows: &[CycleFeatures], path: &Path) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    write_cycle_table_to(rows, &mut buf)?;
    atomic_write(path, &buf)?;
    Ok(())
}

pub fn read_cycle_table(path: &Path) -> Result<Vec<CycleFeatures>, IngestError> {
    read_cycle_table_from(std::fs::File::open(path)?)
}

pub fn read_cycle_table_from<R: Read>(reader: R) -> Result<Vec<CycleFeatures>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for h in headers.iter() {
        if !CYCLE_TABLE_COLUMNS.contains(&h) {
            return Err(IngestError::UnknownColumn(h.to_string()));
        }
    }
    let mut idx = [0usize; 12];
    for (k, name) in CYCLE_TABLE_COLUMNS.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let get = |k: usize| record.get(idx[k]).unwrap_or("");
        let num = |k: usize| -> Result<f64, IngestError> {
            let raw = get(k);
            if raw.is_empty() {
                return Ok(f64::NAN);
            }
            raw.parse::<f64>().map_err(|_| IngestError::Parse {
                row,
                column: CYCLE_TABLE_COLUMNS[k].to_string(),
                value: raw.to_string(),
            })
        };
        let cycle_index = get(1).parse::<usize>().map_err(|_| IngestError::Parse {
            row,
            column: "cycle_index".into(),
            value: get(1).to_string(),
        })?;
        let temp = num(10)?;
        rows.push(CycleFeatures {
            cell_id: get(0).to_string(),
            cycle_index,
            q_ah: num(2)?,
            soh: num(3)?,
            e_wh: num(4)?,
            dv_ir: num(5)?,
            eod_slope: num(6)?,
            plateau_ah: num(7)?,
            mid_curvature: num(8)?,
            mean_current_a: num(9)?,
            mean_temp_c: (!temp.is_nan()).then_some(temp),
            dataset_tag: get(11).to_string(),
        });
    }
    Ok(rows)
}
