//! CSV writers with stable column order.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    pub fn create(dir: &Path, name: &str, header: &[String]) -> Result<Self> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer
            .write_record(fields)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// `prefix_1 .. prefix_n` column names.
pub fn numbered(prefix: &str, from: usize, to: usize) -> Vec<String> {
    (from..=to).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn header(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

pub fn num(x: f64) -> String {
    x.to_string()
}

/// Formats values and pads with empty cells up to `width`.
pub fn padded(values: &[f64], width: usize) -> Vec<String> {
    let mut out: Vec<String> = values.iter().map(|&x| num(x)).collect();
    out.resize(width, String::new());
    out
}
