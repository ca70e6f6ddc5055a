use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
}

impl Cell {
    pub fn as_f64(self) -> f64 {
        match self {
            Cell::Float(v) => v,
            Cell::Int(v) => v as f64,
        }
    }
}

/// A CSV table; floats print with 17 significant digits.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64()).collect())
    }

    /// `# manifest_sha256=<hash>`, the header, then one line per row.
    pub fn to_csv(&self, manifest_hash: &str) -> String {
        let mut s = format!("# manifest_sha256={manifest_hash}\n");
        s.push_str(&self.header.join(","));
        s.push('\n');
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                match cell {
                    Cell::Float(v) => write!(s, "{v:.16e}").unwrap(),
                    Cell::Int(v) => write!(s, "{v}").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Run manifest: resolved config, its hash and the files written. No
/// timestamps, so identical runs produce identical manifests.
pub fn manifest(cfg: &RunConfig, scenario: &str, files: &[String], summary: Value) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "seed": cfg.seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.entries(),
        "files": files,
        "summary": summary,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `<name>.csv` and `manifest.json` into `dir`; returns the CSV path.
pub fn write_table(dir: &Path, name: &str, cfg: &RunConfig, table: &Table, summary: Value) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{name}.csv"));
    fs::write(&csv, table.to_csv(&cfg.sha256()))?;
    write_json(
        &dir.join("manifest.json"),
        &manifest(cfg, name, &[format!("{name}.csv")], summary),
    )?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_format() {
        let mut t = Table::new(&["x", "n"]);
        t.rows.push(vec![Cell::Float(0.1), Cell::Int(3)]);
        let csv = t.to_csv("abc");
        assert_eq!(csv, "# manifest_sha256=abc\nx,n\n1.0000000000000001e-1,3\n");
        assert_eq!(t.column("x").unwrap(), vec![0.1]);
    }
}
