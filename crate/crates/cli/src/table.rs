//! In-memory CSV tables: atomic writes and column lookup by name.

use std::path::Path;

use kneesight::io::atomic_write;

use crate::error::{CliError, Result};

/// Shortest round-trip text of `v`; NaN becomes an empty field.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn opt_int(v: Option<usize>) -> String {
    v.map_or_else(String::new, |k| k.to_string())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::validation(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::schema(path, e))?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Index of every named column, or a schema error naming the first one absent.
    pub fn require(&self, path: &Path, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| self.column(n).ok_or_else(|| CliError::schema(path, format!("no column `{n}`"))))
            .collect()
    }
}

pub fn parse_f64(path: &Path, field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::schema(path, format!("cannot parse `{field}` as {what}")))
}

/// Empty field means absent.
pub fn parse_opt_usize(path: &Path, field: &str, what: &str) -> Result<Option<usize>> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse()
        .map(Some)
        .map_err(|_| CliError::schema(path, format!("cannot parse `{field}` as {what}")))
}
