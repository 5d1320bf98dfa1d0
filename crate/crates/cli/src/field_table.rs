//! Measured coil calibration: RMS field at each drive frequency.

use std::path::Path;

use anyhow::{bail, Context, Result};

use qdyne_core::io::read_two_column;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCalibrationTable {
    /// `(frequency, field_rms)`, frequencies strictly increasing.
    rows: Vec<(f64, f64)>,
}

impl FieldCalibrationTable {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            bail!("calibration table is empty");
        }
        if let Some(w) = rows.windows(2).find(|w| !(w[0].0 < w[1].0)) {
            bail!("calibration frequencies must increase strictly ({} then {})", w[0].0, w[1].0);
        }
        if let Some(r) = rows.iter().find(|r| !(r.1 > 0.0)) {
            bail!("calibration field at {} Hz must be positive, got {}", r.0, r.1);
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .with_context(|| format!("cannot open field table {}", path.display()))?;
        let rows = read_two_column(file).with_context(|| format!("{}", path.display()))?;
        Self::new(rows).with_context(|| format!("{}", path.display()))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.rows[0].0, self.rows[self.rows.len() - 1].0)
    }

    /// Linear interpolation; held at the end values outside the table.
    pub fn field_rms(&self, f: f64) -> f64 {
        let rows = &self.rows;
        if f <= rows[0].0 {
            return rows[0].1;
        }
        let i = rows.partition_point(|r| r.0 < f);
        if i == rows.len() {
            return rows[rows.len() - 1].1;
        }
        let (a, b) = (rows[i - 1], rows[i]);
        a.1 + (b.1 - a.1) * (f - a.0) / (b.0 - a.0)
    }
}
