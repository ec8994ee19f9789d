//! Minimal string table written as CSV.

use std::path::Path;

use anyhow::{Context, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell of the first row whose `key` column equals `value`.
    pub fn lookup(&self, key: &str, value: &str, col: &str) -> Option<&str> {
        let (k, c) = (self.column(key)?, self.column(col)?);
        self.rows
            .iter()
            .find(|r| r[k] == value)
            .map(|r| r[c].as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(String::from).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }
}

/// Shortest round-trip formatting, so reruns produce identical text.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x".into(), num(0.1)]);
        t.push(vec!["y, z".into(), num(f64::NAN)]);
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(Table::read_csv(&p).unwrap(), t);
        assert_eq!(t.lookup("a", "x", "b"), Some("0.1"));
    }
}
